//! Bounded derivative-free local minimizers.

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Result of a local search.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMin {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Nelder–Mead on a box; trial points are projected onto the box.
///
/// The initial simplex places one vertex `step · (hi − lo)` away from `x0`
/// along each axis (reflected inward at the bounds). Non-finite values are
/// treated as `+∞`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], step: f64, max_evals: usize) -> LocalMin
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut start = x0.to_vec();
    clamp_into(&mut start, lo, hi);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&start, &mut evals);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut v = start.clone();
        let d = step * (hi[i] - lo[i]);
        v[i] = if v[i] + d <= hi[i] { v[i] + d } else { v[i] - d };
        clamp_into(&mut v, lo, hi);
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= 1e-10 * (1.0 + best.abs()) {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            clamp_into(&mut p, lo, hi);
            p
        };
        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    for (v, b) in vertex.0.iter_mut().zip(&x_best) {
                        *v = b + sigma * (*v - b);
                    }
                    vertex.1 = eval(&vertex.0, &mut evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    LocalMin { x, value, evaluations: evals }
}

/// Coordinate-wise pattern search on a box.
///
/// Each iteration polls `x ± step_i e_i` for every coordinate, moving to any
/// improving point. When a full sweep fails to improve, all steps are
/// halved. `project` maps each trial point before evaluation (e.g. rounding
/// of integer coordinates).
pub fn pattern_search<F, P>(
    mut f: F,
    project: P,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    initial_step: f64,
    iterations: usize,
) -> LocalMin
where
    F: FnMut(&[f64]) -> f64,
    P: Fn(&mut [f64]),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    project(&mut x);
    let mut fx = f(&x);
    let mut evals = 1;
    let mut steps: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| initial_step * (h - l)).collect();
    for _ in 0..iterations {
        let mut improved = false;
        for i in 0..n {
            for dir in [1.0, -1.0] {
                let mut trial = x.clone();
                trial[i] += dir * steps[i];
                clamp_into(&mut trial, lo, hi);
                project(&mut trial);
                if trial == x {
                    continue;
                }
                let ft = f(&trial);
                evals += 1;
                if ft < fx {
                    x = trial;
                    fx = ft;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            for s in &mut steps {
                *s *= 0.5;
            }
        }
    }
    LocalMin { x, value: fx, evaluations: evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosen(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let r = nelder_mead(rosen, &[-1.2, 1.0], &[-2.0, -2.0], &[2.0, 2.0], 0.1, 2000);
        assert!((r.x[0] - 1.0).abs() < 1e-3, "{r:?}");
        assert!((r.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn nelder_mead_respects_bounds() {
        let r = nelder_mead(|x| (x[0] - 5.0).powi(2) + x[1].powi(2), &[0.0, 0.5], &[-1.0, -1.0], &[1.0, 1.0], 0.2, 500);
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!(r.x[1].abs() < 1e-3);
    }

    #[test]
    fn pattern_search_on_quadratic_with_rounding() {
        let r = pattern_search(
            |x| (x[0] - 0.3).powi(2) + (x[1] - 7.0).powi(2),
            |x| x[1] = x[1].round(),
            &[0.9, 2.0],
            &[0.0, 0.0],
            &[1.0, 10.0],
            0.25,
            50,
        );
        assert!((r.x[0] - 0.3).abs() < 1e-3);
        assert_eq!(r.x[1], 7.0);
    }
}
