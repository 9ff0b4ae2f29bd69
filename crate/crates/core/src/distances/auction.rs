/// ε-scaling schedule for [`auction`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuctionConfig {
    /// Final ε is `final_gap · max_cost / n`, so the assignment found costs
    /// at most `final_gap · max_cost` above the optimum.
    pub final_gap: f64,
    /// Factor by which ε shrinks between phases.
    pub scaling: f64,
}

impl Default for AuctionConfig {
    fn default() -> Self {
        AuctionConfig {
            final_gap: 1e-3,
            scaling: 5.0,
        }
    }
}

const NONE: usize = usize::MAX;

/// Forward auction with ε-scaling on an `n×n` row-major cost matrix.
/// Returns `assignment[row] = col`; always a valid permutation.
pub fn auction(cost: &[f64], n: usize, cfg: AuctionConfig) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n×n");
    if n <= 1 {
        return (0..n).collect();
    }
    let cmax = cost.iter().copied().fold(0.0f64, |a, c| a.max(c.abs()));
    if cmax == 0.0 {
        return (0..n).collect();
    }
    let eps_final = cfg.final_gap * cmax / n as f64;
    let mut eps = (cmax / 4.0).max(eps_final);
    let mut prices = vec![0.0f64; n];
    let mut person_obj = vec![NONE; n];
    let mut obj_person = vec![NONE; n];
    loop {
        person_obj.iter_mut().for_each(|p| *p = NONE);
        obj_person.iter_mut().for_each(|p| *p = NONE);
        let mut queue: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = queue.pop() {
            let row = &cost[i * n..(i + 1) * n];
            let (mut best, mut v1, mut v2) = (NONE, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (j, (&c, &p)) in row.iter().zip(&prices).enumerate() {
                let val = -c - p;
                if val > v1 {
                    v2 = v1;
                    v1 = val;
                    best = j;
                } else if val > v2 {
                    v2 = val;
                }
            }
            prices[best] += v1 - v2 + eps;
            let prev = obj_person[best];
            if prev != NONE {
                person_obj[prev] = NONE;
                queue.push(prev);
            }
            obj_person[best] = i;
            person_obj[i] = best;
        }
        if eps <= eps_final {
            break;
        }
        eps = (eps / cfg.scaling).max(eps_final);
    }
    person_obj
}
