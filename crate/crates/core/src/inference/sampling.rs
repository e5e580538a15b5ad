use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Model;
use crate::circuit::LayerKind;
use crate::engine::Evaluator;
use crate::error::{Error, Result};
use crate::input::Support;
use crate::par;
use crate::quadrature::adaptive_simpson;

/// Absolute tolerance on the conditional CDF when inverting it.
const CDF_TOL: f64 = 1e-9;
/// Pieces each continuous support interval is cut into before integration.
const PIECES: usize = 64;

/// `n` exact samples, drawn variable by variable in index order from the
/// conditionals `p(x_v | x_<v)`. Sample `i` uses its own ChaCha stream `i`
/// of the generator seeded with `seed`, so results do not depend on
/// threading.
pub fn sample(model: &Model, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    model.log_partition()?;
    let ev = model.evaluator();
    let domains = (0..model.variable_count())
        .map(|v| Domain::of(&ev, v))
        .collect::<Result<Vec<_>>>()?;
    par::try_map(n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        draw(&ev, &domains, &mut rng)
    })
}

enum Domain {
    Discrete(usize),
    /// Sorted cut points covering the support.
    Continuous(Vec<f64>),
}

impl Domain {
    fn of(ev: &Evaluator<'_>, variable: usize) -> Result<Domain> {
        let c = ev.circuit();
        let mut cuts: Vec<f64> = Vec::new();
        let mut discrete = None;
        for (id, layer) in c.input_layers() {
            let LayerKind::Input { variable: v, family } = &layer.kind else { continue };
            if *v != variable {
                continue;
            }
            let p = &ev.effective()[c.param_range(id)];
            match family.support(p, layer.width) {
                Support::Discrete { states } => discrete = Some(states),
                Support::Interval { lower, upper } => {
                    cuts.push(lower);
                    cuts.push(upper);
                    cuts.extend(family.breakpoints());
                    if let crate::input::InputFamily::Gaussian = family {
                        cuts.extend(&p[..layer.width]);
                    }
                }
            }
        }
        if let Some(m) = discrete {
            return Ok(Domain::Discrete(m));
        }
        if cuts.is_empty() {
            return Err(Error::InvalidArgument(format!("no input layer over variable {variable}")));
        }
        let lo = cuts.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = cuts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        cuts.extend((1..PIECES).map(|i| lo + (hi - lo) * i as f64 / PIECES as f64));
        cuts.retain(|x| *x >= lo && *x <= hi);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        Ok(Domain::Continuous(cuts))
    }
}

fn draw(ev: &Evaluator<'_>, domains: &[Domain], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let d = domains.len();
    let mut point: Vec<Option<f64>> = vec![None; d];
    for v in 0..d {
        let marginal = ev.value(&point)?;
        if marginal.is_zero() || !marginal.log_mag.is_finite() {
            return Err(Error::numeric(format!(
                "conditional of variable {v} has a non-finite or zero normalizer"
            )));
        }
        let density = |x: f64, point: &mut Vec<Option<f64>>| -> Result<f64> {
            point[v] = Some(x);
            let y = ev.value(point)?;
            Ok(if y.is_zero() { 0.0 } else { (y.log_mag - marginal.log_mag).exp() })
        };
        let x = match &domains[v] {
            Domain::Discrete(m) => {
                let probs = (0..*m)
                    .map(|s| density(s as f64, &mut point))
                    .collect::<Result<Vec<f64>>>()?;
                let total: f64 = probs.iter().sum();
                if !(total.is_finite() && total > 0.0) {
                    return Err(Error::numeric(format!("conditional pmf of variable {v} sums to {total}")));
                }
                let u = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = m - 1;
                for (s, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = s;
                        break;
                    }
                }
                pick as f64
            }
            Domain::Continuous(cuts) => {
                let u = rng.random::<f64>();
                invert_cdf(cuts, u, |x| {
                    let mut p = point.clone();
                    density(x, &mut p)
                })?
            }
        };
        point[v] = Some(x);
    }
    Ok(point.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
}

/// Solve `F(x) = u` for the CDF of the (approximately normalized) density
/// `f` supported on `[cuts[0], cuts[last]]`.
fn invert_cdf<F: Fn(f64) -> Result<f64>>(cuts: &[f64], u: f64, f: F) -> Result<f64> {
    let err = std::cell::RefCell::new(None);
    let g = |x: f64| match f(x) {
        Ok(v) if v.is_finite() => v,
        Ok(v) => {
            err.borrow_mut().get_or_insert(Error::numeric(format!("conditional density {v} at {x}")));
            0.0
        }
        Err(e) => {
            err.borrow_mut().get_or_insert(e);
            0.0
        }
    };
    let tol = CDF_TOL * 0.01;
    let masses: Vec<f64> = cuts.windows(2).map(|w| adaptive_simpson(&g, w[0], w[1], tol)).collect();
    if let Some(e) = err.borrow_mut().take() {
        return Err(e);
    }
    let total: f64 = masses.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::numeric(format!("conditional density integrates to {total}")));
    }
    let target = u * total;
    let mut acc = 0.0;
    let mut piece = masses.len() - 1;
    for (i, m) in masses.iter().enumerate() {
        if acc + m >= target {
            piece = i;
            break;
        }
        acc += m;
    }
    // bisection, integrating only over the newly added sub-interval
    let (mut lo, mut hi) = (cuts[piece], cuts[piece + 1]);
    let mut f_lo = acc;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f_lo + adaptive_simpson(&g, lo, mid, tol);
        if (f_mid - target).abs() <= CDF_TOL * total {
            lo = mid;
            hi = mid;
            break;
        }
        if f_mid < target {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    if let Some(e) = err.borrow_mut().take() {
        return Err(e);
    }
    Ok(0.5 * (lo + hi))
}
