use crate::num::Real;

/// Length of the longest common subsequence of two token slices.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word-level ROUGE-L F1 (whitespace tokens, beta = 1). Zero when either side is empty.
pub fn rouge_l<F: Real>(candidate: &str, reference: &str) -> F {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    let lcs = lcs_len(&c, &r);
    if lcs == 0 {
        return F::zero();
    }
    let p = F::from_count(lcs) / F::from_count(c.len());
    let rec = F::from_count(lcs) / F::from_count(r.len());
    (F::one() + F::one()) * p * rec / (p + rec)
}
