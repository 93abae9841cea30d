//! Shared test helpers: a brute-force linearizability oracle and history
//! generators.

#![allow(dead_code)]

use powerstore::simnet::{OpKind, OperationRecord, Pid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(client, kind, invoke, response, value)`; value 0 is `⊥` for reads.
pub type Spec = (u64, OpKind, usize, Option<usize>, u8);

pub fn history(spec: &[Spec]) -> Vec<OperationRecord> {
    spec.iter()
        .enumerate()
        .map(|(op, &(c, kind, invoke, response, v))| OperationRecord {
            op,
            client: match kind {
                OpKind::Write => Pid::Writer(c),
                OpKind::Read => Pid::Reader(c),
            },
            kind,
            invoke,
            response,
            invoke_tick: invoke as u64,
            response_tick: response.map(|r| r as u64),
            value: (v != 0).then(|| vec![v]),
            ts: None,
            rounds: 2,
            repaired: false,
            failed: None,
            messages: 0,
            bytes: 0,
            fragment_bytes: 0,
        })
        .collect()
}

/// Tries every order of the complete operations together with every subset
/// of the pending writes. Pending reads are ignored.
pub fn brute_force(records: &[OperationRecord]) -> bool {
    let ops: Vec<&OperationRecord> =
        records.iter().filter(|r| r.response.is_some() || r.kind == OpKind::Write).collect();
    let pending: Vec<usize> = (0..ops.len()).filter(|&i| ops[i].response.is_none()).collect();
    for mask in 0..1u32 << pending.len() {
        let mut chosen: Vec<usize> = (0..ops.len())
            .filter(|i| match pending.iter().position(|p| p == i) {
                Some(k) => mask >> k & 1 == 1,
                None => true,
            })
            .collect();
        if permutations_ok(&ops, &mut chosen, 0) {
            return true;
        }
    }
    false
}

fn permutations_ok(ops: &[&OperationRecord], perm: &mut Vec<usize>, k: usize) -> bool {
    if k == perm.len() {
        return sequential_ok(ops, perm);
    }
    for j in k..perm.len() {
        perm.swap(k, j);
        if permutations_ok(ops, perm, k + 1) {
            return true;
        }
        perm.swap(k, j);
    }
    false
}

fn sequential_ok(ops: &[&OperationRecord], perm: &[usize]) -> bool {
    for (a, &i) in perm.iter().enumerate() {
        for &j in &perm[a + 1..] {
            if ops[j].response.is_some_and(|resp| resp < ops[i].invoke) {
                return false;
            }
        }
    }
    let mut value: Option<&Vec<u8>> = None;
    for &i in perm {
        match ops[i].kind {
            OpKind::Write => value = ops[i].value.as_ref(),
            OpKind::Read if ops[i].value.as_ref() != value => return false,
            OpKind::Read => {}
        }
    }
    true
}

/// Orders of `2n` endpoints where each op appears twice (invoke, then
/// response) and ops first appear in index order.
fn endpoint_orders(n: usize, used: &mut [u8], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == 2 * n {
        out.push(cur.clone());
        return;
    }
    let first_unused = used.iter().position(|&u| u == 0).unwrap_or(n);
    for o in 0..n {
        if used[o] == 2 || (used[o] == 0 && o != first_unused) {
            continue;
        }
        used[o] += 1;
        cur.push(o);
        endpoint_orders(n, used, cur, out);
        cur.pop();
        used[o] -= 1;
    }
}

/// Every history of exactly `n` operations: all interval orders, kinds,
/// pending writes, and read values drawn from `⊥` and the written values.
pub fn exhaustive(n: usize, mut visit: impl FnMut(&[Spec])) -> usize {
    let mut orders = Vec::new();
    endpoint_orders(n, &mut vec![0; n], &mut Vec::new(), &mut orders);
    let mut count = 0;
    for seq in &orders {
        let mut inv = vec![0; n];
        let mut resp = vec![0; n];
        let mut seen = vec![false; n];
        for (pos, &o) in seq.iter().enumerate() {
            if seen[o] {
                resp[o] = pos;
            } else {
                inv[o] = pos;
                seen[o] = true;
            }
        }
        for kinds in 0..1u32 << n {
            let writes: Vec<usize> = (0..n).filter(|i| kinds >> i & 1 == 1).collect();
            let reads: Vec<usize> = (0..n).filter(|i| kinds >> i & 1 == 0).collect();
            let choices = writes.len() as u32 + 1;
            for pend in 0..1u32 << writes.len() {
                for vals in 0..choices.pow(reads.len() as u32) {
                    let mut spec = Vec::with_capacity(n);
                    let mut v = vals;
                    for i in 0..n {
                        let (kind, pending, value) = match writes.iter().position(|&w| w == i) {
                            Some(k) => (OpKind::Write, pend >> k & 1 == 1, k as u8 + 1),
                            None => {
                                let x = (v % choices) as u8;
                                v /= choices;
                                (OpKind::Read, false, x)
                            }
                        };
                        spec.push((i as u64, kind, inv[i], (!pending).then_some(resp[i]), value));
                    }
                    visit(&spec);
                    count += 1;
                }
            }
        }
    }
    count
}

/// A random history of `1..=max_ops` operations with heavy overlap.
pub fn random_history(rng: &mut ChaCha8Rng, max_ops: usize) -> Vec<Spec> {
    let n = rng.random_range(1..=max_ops);
    let mut spec = Vec::new();
    let mut wval = 0u8;
    for i in 0..n {
        let a = rng.random_range(0..40usize) * 2;
        let b = a + 1 + rng.random_range(0..12usize) * 2;
        let write = rng.random_bool(0.4);
        let pending = write && rng.random_bool(0.15);
        let value = if write {
            wval += 1;
            wval
        } else {
            rng.random_range(0..=wval.max(1))
        };
        // Scaling plus a per-op offset keeps every endpoint distinct.
        let (a, b) = (a * 16 + i, b * 16 + i);
        spec.push((i as u64, if write { OpKind::Write } else { OpKind::Read }, a, (!pending).then_some(b), value));
    }
    spec
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
