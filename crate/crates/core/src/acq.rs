//! Acquisition rules and their optimization over a box or a finite pool.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::bins::{entropy, BinGrid, TransitionMatrix};
use crate::error::{Error, Result};
use crate::predict::{DecoupledPrediction, Posterior, Prediction};
use crate::rng;
use crate::sobol::sobol_in_bounds;
use crate::special::{norm_cdf, norm_pdf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcqRule {
    Ei,
    LogEi,
    Lcb,
    Ts,
    Bald,
    Epig,
    Var,
    Random,
}

impl FromStr for AcqRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "ei" => Self::Ei,
            "logei" | "log-ei" | "log_ei" => Self::LogEi,
            "lcb" => Self::Lcb,
            "ts" | "thompson" => Self::Ts,
            "bald" => Self::Bald,
            "epig" => Self::Epig,
            "var" => Self::Var,
            "random" => Self::Random,
            _ => return Err(Error::config(format!("unknown acquisition rule {s:?}"))),
        })
    }
}

impl fmt::Display for AcqRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Ei => "ei",
            Self::LogEi => "logei",
            Self::Lcb => "lcb",
            Self::Ts => "ts",
            Self::Bald => "bald",
            Self::Epig => "epig",
            Self::Var => "var",
            Self::Random => "random",
        };
        f.write_str(s)
    }
}

/// Which uncertainty the rule consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[serde(alias = "epi")]
    Epistemic,
    Total,
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epi" | "epistemic" => Ok(Self::Epistemic),
            "total" | "tot" => Ok(Self::Total),
            _ => Err(Error::config(format!("unknown uncertainty source {s:?}"))),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Epistemic => "epi",
            Self::Total => "total",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcqSpec {
    pub rule: AcqRule,
    pub source: Source,
    pub beta: f64,
    pub eps_v: f64,
    pub eps_ei: f64,
    pub sobol_count: usize,
    pub n_restarts: usize,
    pub refine_steps: usize,
}

impl Default for AcqSpec {
    fn default() -> Self {
        Self {
            rule: AcqRule::LogEi,
            source: Source::Epistemic,
            beta: 2.0,
            eps_v: 1e-12,
            eps_ei: 1e-25,
            sobol_count: 512,
            n_restarts: 8,
            refine_steps: 100,
        }
    }
}

impl AcqSpec {
    pub fn new(rule: AcqRule, source: Source) -> Self {
        Self { rule, source, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::contract(format!("LCB beta must be positive, got {}", self.beta)));
        }
        if !(self.eps_v > 0.0 && self.eps_ei > 0.0) {
            return Err(Error::contract("numerical floors must be positive"));
        }
        if self.sobol_count == 0 || self.n_restarts == 0 {
            return Err(Error::contract("candidate and restart counts must be at least 1"));
        }
        Ok(())
    }

    /// Short label such as `logei-epi`.
    pub fn label(&self) -> String {
        match self.rule {
            AcqRule::Random => "random".into(),
            r => format!("{r}-{}", self.source),
        }
    }
}

/// `(μ, v)` consumed by the rules for one prediction.
pub fn moments(pred: &Prediction, source: Source, eps_v: f64) -> Result<(f64, f64)> {
    match (pred, source) {
        (Prediction::Gaussian(m), Source::Epistemic) => Ok((m.mu_f, m.v_epi.max(eps_v))),
        (Prediction::Gaussian(m), Source::Total) => Ok((m.mu_f, m.v_tot.max(eps_v))),
        (Prediction::Binned(p), source) => binned_moments(p, source, eps_v),
    }
}

fn binned_moments(p: &DecoupledPrediction, source: Source, eps_v: f64) -> Result<(f64, f64)> {
    match (p.latent_moments(), p.noise_var(), source) {
        (Some(lm), _, Source::Epistemic) => Ok((lm.mean, lm.variance.max(eps_v))),
        (None, _, Source::Epistemic) => {
            Err(Error::contract("epistemic moments requested from an observation-only prediction"))
        }
        (Some(lm), Some(noise), Source::Total) => Ok((p.obs_moments().mean, (lm.variance + noise).max(eps_v))),
        _ => {
            let om = p.obs_moments();
            Ok((om.mean, om.variance.max(eps_v)))
        }
    }
}

/// Expected improvement below `tau` under `N(μ, v)`.
pub fn ei(mu: f64, v: f64, tau: f64) -> f64 {
    let s = v.sqrt();
    let z = (tau - mu) / s;
    ((tau - mu) * norm_cdf(z) + s * norm_pdf(z)).max(0.0)
}

pub fn log_ei(mu: f64, v: f64, tau: f64, eps_ei: f64) -> f64 {
    (ei(mu, v, tau) + eps_ei).ln()
}

/// `μ − β √max(v, ε_v)`; smaller is better.
pub fn lcb(mu: f64, v: f64, beta: f64, eps_v: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::contract(format!("LCB beta must be positive, got {beta}")));
    }
    Ok(mu - beta * v.max(eps_v).sqrt())
}

/// One independent draw per candidate from its marginal moments.
pub fn thompson_scores(moments: &[(f64, f64)], seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0, rng::tag::THOMPSON);
    moments
        .iter()
        .map(|&(mu, v)| {
            let z: f64 = StandardNormal.sample(&mut r);
            mu + v.sqrt() * z
        })
        .collect()
}

/// Mutual information between the latent bin and the observation bin.
pub fn bald_score(grid: &BinGrid, pred: &DecoupledPrediction) -> Result<f64> {
    let (Some(latent), Some(noise)) = (pred.latent(), pred.noise_var()) else {
        return Err(Error::contract("BALD needs a decoupled prediction"));
    };
    let t = TransitionMatrix::new(grid, noise)?;
    let conditional: f64 = latent
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(j, p)| p * entropy(t.row(j)))
        .sum();
    Ok((pred.obs().entropy() - conditional).max(0.0))
}

/// Mutual information between `f` and `y` for a Gaussian latent and Gaussian noise.
pub fn gaussian_bald(v_epi: f64, noise_var: f64) -> f64 {
    0.5 * (v_epi / noise_var).ln_1p()
}

/// Representation and epistemic fraction `η = v_epi / v_tot` of one point.
#[derive(Clone, Debug, PartialEq)]
pub struct EpigPoint {
    pub representation: Vec<f64>,
    pub eta: f64,
}

impl EpigPoint {
    pub fn from_prediction(pred: &Prediction, eps_v: f64) -> Result<Self> {
        let Some(r) = pred.representation() else {
            return Err(Error::config("EPIG needs representations; this surrogate does not provide them"));
        };
        let (_, v_epi) = moments(pred, Source::Epistemic, eps_v)?;
        let (_, v_tot) = moments(pred, Source::Total, eps_v)?;
        Ok(Self { representation: r.to_vec(), eta: (v_epi / v_tot.max(eps_v)).clamp(0.0, 1.0) })
    }
}

/// Mean over targets of `−½ log(1 − ρ²)`, `ρ² = (r·r′)² η η′`.
pub fn epig_proxy_scores(candidates: &[EpigPoint], targets: &[EpigPoint]) -> Vec<f64> {
    let n = targets.len().max(1) as f64;
    crate::par::map(candidates, |c| {
        targets
            .iter()
            .map(|t| {
                let dot: f64 = c.representation.iter().zip(&t.representation).map(|(a, b)| a * b).sum();
                let rho2 = (dot * dot * c.eta * t.eta).clamp(0.0, 1.0 - 1e-9);
                -0.5 * (1.0 - rho2).ln()
            })
            .sum::<f64>()
            / n
    })
}

/// Best mean among evaluated points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub tau: f64,
    pub source: Source,
    pub arg: Vec<f64>,
}

pub fn incumbent(posterior: &dyn Posterior, history_x: &[Vec<f64>], source: Source, eps_v: f64) -> Result<Incumbent> {
    if history_x.is_empty() {
        return Err(Error::contract("incumbent needs at least one evaluated point"));
    }
    let preds = posterior.predict(history_x)?;
    let mut best = (f64::INFINITY, 0);
    for (i, p) in preds.iter().enumerate() {
        let (mu, _) = moments(p, source, eps_v)?;
        if mu < best.0 {
            best = (mu, i);
        }
    }
    Ok(Incumbent { tau: best.0, source, arg: history_x[best.1].clone() })
}

/// Scores where larger is better. `tau` is required by EI rules, `grid` by
/// BALD, `targets` by EPIG.
pub struct Scorer<'a> {
    pub spec: &'a AcqSpec,
    pub tau: Option<f64>,
    pub grid: Option<&'a BinGrid>,
    pub targets: Option<&'a [EpigPoint]>,
}

impl Scorer<'_> {
    pub fn score(&self, preds: &[Prediction]) -> Result<Vec<f64>> {
        let spec = self.spec;
        let need_tau = || self.tau.ok_or_else(|| Error::contract("EI needs an incumbent"));
        match spec.rule {
            AcqRule::Ei | AcqRule::LogEi => {
                let tau = need_tau()?;
                preds
                    .iter()
                    .map(|p| {
                        let (mu, v) = moments(p, spec.source, spec.eps_v)?;
                        Ok(match spec.rule {
                            AcqRule::Ei => ei(mu, v, tau),
                            _ => log_ei(mu, v, tau, spec.eps_ei),
                        })
                    })
                    .collect()
            }
            AcqRule::Lcb => preds
                .iter()
                .map(|p| {
                    let (mu, v) = moments(p, spec.source, spec.eps_v)?;
                    Ok(-lcb(mu, v, spec.beta, spec.eps_v)?)
                })
                .collect(),
            AcqRule::Var => preds.iter().map(|p| Ok(moments(p, spec.source, spec.eps_v)?.1)).collect(),
            AcqRule::Bald => {
                preds
                    .iter()
                    .map(|p| match (self.grid, p) {
                        (Some(grid), _) => bald_score(grid, &p.to_binned(grid)?),
                        (None, Prediction::Gaussian(m)) => Ok(gaussian_bald(m.v_epi, m.noise_var)),
                        (None, Prediction::Binned(_)) => Err(Error::config("BALD needs a bin grid")),
                    })
                    .collect()
            }
            AcqRule::Epig => {
                let targets = self.targets.ok_or_else(|| Error::config("EPIG needs target points"))?;
                let cands = preds
                    .iter()
                    .map(|p| EpigPoint::from_prediction(p, spec.eps_v))
                    .collect::<Result<Vec<_>>>()?;
                Ok(epig_proxy_scores(&cands, targets))
            }
            AcqRule::Ts | AcqRule::Random => {
                Err(Error::contract("sampling rules are scored by the selection routines"))
            }
        }
    }
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() || bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && hi > lo)) {
        return Err(Error::domain(format!("degenerate bounds {bounds:?}")));
    }
    Ok(())
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Selected query with the score it achieved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub x: Vec<f64>,
    /// Larger is better; `None` for random selection.
    pub score: Option<f64>,
    /// Incumbent used by EI rules.
    pub tau: Option<f64>,
}

/// Selects the next query inside `bounds`: a Sobol screen, then pattern-search
/// refinement of the best candidates. Thompson sampling and random selection
/// choose from the screen directly.
pub fn optimize_acquisition(
    posterior: &dyn Posterior,
    history_x: &[Vec<f64>],
    bounds: &[(f64, f64)],
    spec: &AcqSpec,
    seed: u64,
) -> Result<Vec<f64>> {
    select_point(posterior, history_x, bounds, spec, seed).map(|s| s.x)
}

/// [`optimize_acquisition`] returning the achieved score and incumbent as well.
pub fn select_point(
    posterior: &dyn Posterior,
    history_x: &[Vec<f64>],
    bounds: &[(f64, f64)],
    spec: &AcqSpec,
    seed: u64,
) -> Result<Selection> {
    spec.validate()?;
    check_bounds(bounds)?;
    if spec.source == Source::Epistemic && !posterior.is_decoupled() && spec.rule != AcqRule::Random {
        return Err(Error::contract("observation-only surrogates support source=total only"));
    }
    if spec.rule == AcqRule::Random {
        let mut r = rng::stream(seed, 0, rng::tag::RANDOM_POLICY);
        let x = bounds.iter().map(|&(lo, hi)| r.random_range(lo..hi)).collect();
        return Ok(Selection { x, score: None, tau: None });
    }
    let candidates = sobol_in_bounds(spec.sobol_count, bounds, rng::derive_seed(seed, 0, rng::tag::SOBOL))?;
    let preds = posterior.predict(&candidates)?;
    if spec.rule == AcqRule::Ts {
        let m = preds.iter().map(|p| moments(p, spec.source, spec.eps_v)).collect::<Result<Vec<_>>>()?;
        let draws = thompson_scores(&m, seed);
        let neg: Vec<f64> = draws.iter().map(|d| -d).collect();
        let b = argmax(&neg);
        return Ok(Selection { x: candidates[b].clone(), score: Some(neg[b]), tau: None });
    }
    let tau = match spec.rule {
        AcqRule::Ei | AcqRule::LogEi => Some(incumbent(posterior, history_x, spec.source, spec.eps_v)?.tau),
        _ => None,
    };
    let scorer = Scorer { spec, tau, grid: posterior.grid(), targets: None };
    let scores = scorer.score(&preds)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for &i in order.iter().take(spec.n_restarts) {
        let (x, s) = pattern_search(candidates[i].clone(), scores[i], bounds, spec.refine_steps, |pts| {
            scorer.score(&posterior.predict(pts)?)
        })?;
        if best.as_ref().is_none_or(|(bs, _)| s > *bs) {
            best = Some((s, x));
        }
    }
    let (score, x) = best.expect("at least one restart");
    Ok(Selection { x, score: Some(score), tau })
}

/// Compass search: try `±h` along every axis, move to the best improving
/// neighbour, halve the steps when none improves.
fn pattern_search(
    mut x: Vec<f64>,
    mut score: f64,
    bounds: &[(f64, f64)],
    steps: usize,
    eval: impl Fn(&[Vec<f64>]) -> Result<Vec<f64>>,
) -> Result<(Vec<f64>, f64)> {
    let mut h: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.1 * (hi - lo)).collect();
    for _ in 0..steps {
        let mut nbrs = Vec::with_capacity(2 * x.len());
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            for sign in [1.0, -1.0] {
                let mut p = x.clone();
                p[i] = (p[i] + sign * h[i]).clamp(lo, hi);
                if p[i] != x[i] {
                    nbrs.push(p);
                }
            }
        }
        if nbrs.is_empty() {
            break;
        }
        let s = eval(&nbrs)?;
        let b = argmax(&s);
        if s[b] > score {
            score = s[b];
            x = nbrs.swap_remove(b);
        } else {
            h.iter_mut().for_each(|v| *v *= 0.5);
        }
    }
    Ok((x, score))
}

/// Selects a pool index. `targets` are EPIG target points.
pub fn select_from_pool(
    posterior: &dyn Posterior,
    pool: &[Vec<f64>],
    spec: &AcqSpec,
    targets: Option<&[Vec<f64>]>,
    grid: Option<&BinGrid>,
    seed: u64,
) -> Result<usize> {
    spec.validate()?;
    if pool.is_empty() {
        return Err(Error::domain("empty candidate pool"));
    }
    if spec.rule == AcqRule::Random {
        return Ok(rng::stream(seed, 0, rng::tag::RANDOM_POLICY).random_range(0..pool.len()));
    }
    if spec.source == Source::Epistemic && !posterior.is_decoupled() {
        return Err(Error::contract("observation-only surrogates support source=total only"));
    }
    let preds = posterior.predict(pool)?;
    if spec.rule == AcqRule::Ts {
        let m = preds.iter().map(|p| moments(p, spec.source, spec.eps_v)).collect::<Result<Vec<_>>>()?;
        let neg: Vec<f64> = thompson_scores(&m, seed).iter().map(|d| -d).collect();
        return Ok(argmax(&neg));
    }
    let target_points = match (spec.rule, targets) {
        (AcqRule::Epig, Some(t)) => Some(
            posterior
                .predict(t)?
                .iter()
                .map(|p| EpigPoint::from_prediction(p, spec.eps_v))
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => None,
    };
    let scorer = Scorer { spec, tau: None, grid: grid.or(posterior.grid()), targets: target_points.as_deref() };
    Ok(argmax(&scorer.score(&preds)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bins::{convolve, BinPmf};
    use crate::gp::PosteriorMoments;
    use proptest::prelude::*;

    /// Gaussian posterior with a fixed closed form.
    struct Mock<F: Fn(&[f64]) -> (f64, f64) + Sync>(F);

    impl<F: Fn(&[f64]) -> (f64, f64) + Sync> Posterior for Mock<F> {
        fn predict(&self, q: &[Vec<f64>]) -> Result<Vec<Prediction>> {
            Ok(q.iter()
                .map(|x| {
                    let (m, v) = (self.0)(x);
                    Prediction::Gaussian(PosteriorMoments::new(m, v, 0.01))
                })
                .collect())
        }

        fn is_decoupled(&self) -> bool {
            true
        }
    }

    #[test]
    fn ei_examples() {
        assert!((ei(0.0, 1.0, 0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((ei(-1.0, 1e-12, 0.5) - 1.5).abs() < 1e-9);
        assert!(ei(1.0, 1e-12, 0.5).abs() < 1e-12);
        assert_eq!(log_ei(3.0, 1e-12, 0.0, 1e-25), (1e-25f64).ln());
        assert!((log_ei(0.0, 1.0, 0.0, 1e-25) - 0.398_942_280_401_432_7f64.ln()).abs() < 1e-14);
        assert!(ei(40.0, 1.0, 0.0) >= 0.0);
    }

    #[test]
    fn lcb_examples() {
        assert_eq!(lcb(1.0, 4.0, 2.0, 1e-12).unwrap(), -3.0);
        assert!((lcb(1.0, 1e-12, 2.0, 1e-12).unwrap() - 1.0).abs() < 1e-5);
        assert!(matches!(lcb(0.0, 1.0, 0.0, 1e-12), Err(Error::Contract(_))));
        let spec = AcqSpec { beta: 0.0, ..AcqSpec::default() };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn thompson_examples() {
        let m = [(0.3, 1e-12), (-0.2, 1e-12), (0.1, 1e-12)];
        let d = thompson_scores(&m, 4);
        assert_eq!(argmax(&d.iter().map(|v| -v).collect::<Vec<_>>()), 1);
        assert_eq!(thompson_scores(&m, 9), thompson_scores(&m, 9));
        let n = 100_000;
        let first = (0..n)
            .filter(|&s| {
                let d = thompson_scores(&[(0.0, 1.0), (0.5, 1.0)], s as u64);
                d[0] < d[1]
            })
            .count();
        let p = first as f64 / n as f64;
        assert!((p - norm_cdf(0.5 / 2f64.sqrt())).abs() < 0.01, "{p}");
    }

    fn brute_mi(grid: &BinGrid, latent: &[f64], noise: f64) -> f64 {
        let t = TransitionMatrix::new(grid, noise).unwrap();
        let k = grid.len();
        let py: Vec<f64> = (0..k).map(|c| (0..k).map(|j| latent[j] * t.get(j, c)).sum()).collect();
        let mut mi = 0.0;
        for j in 0..k {
            for c in 0..k {
                let pj = latent[j] * t.get(j, c);
                if pj > 0.0 {
                    mi += pj * (pj / (latent[j] * py[c])).ln();
                }
            }
        }
        mi
    }

    #[test]
    fn bald_examples() {
        let g = BinGrid::uniform(-2.0, 2.0, 16).unwrap();
        let one_hot = DecoupledPrediction::decoupled(&g, BinPmf::one_hot(16, 5), 0.3, None).unwrap();
        assert!(bald_score(&g, &one_hot).unwrap().abs() < 1e-12);
        let mut w = vec![0.0; 16];
        w[3] = 0.5;
        w[11] = 0.5;
        let two = DecoupledPrediction::decoupled(&g, BinPmf::new(w).unwrap(), 1e-12, None).unwrap();
        assert!((bald_score(&g, &two).unwrap() - 2f64.ln()).abs() < 1e-9);
        let tuned = DecoupledPrediction::tuned(&g, BinPmf::uniform(16), None).unwrap();
        assert!(matches!(bald_score(&g, &tuned), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn bald_is_mutual_information(w in prop::collection::vec(0.0f64..1.0, 12), ln_s in -6.0f64..1.0) {
            prop_assume!(w.iter().sum::<f64>() > 1e-3);
            let g = BinGrid::uniform(-1.5, 1.5, 12).unwrap();
            let latent = BinPmf::from_weights(w).unwrap();
            let noise = ln_s.exp();
            let p = DecoupledPrediction::decoupled(&g, latent.clone(), noise, None).unwrap();
            let b = bald_score(&g, &p).unwrap();
            prop_assert!(b >= 0.0);
            prop_assert!((b - brute_mi(&g, latent.probs(), noise)).abs() < 1e-9);
        }

        #[test]
        fn log_ei_preserves_argmax(c in prop::collection::vec((-3.0f64..3.0, 1e-6f64..4.0), 1..40), tau in -2.0f64..2.0) {
            let e: Vec<f64> = c.iter().map(|&(m, v)| ei(m, v, tau)).collect();
            let l: Vec<f64> = c.iter().map(|&(m, v)| log_ei(m, v, tau, 1e-25)).collect();
            let (ae, al) = (argmax(&e), argmax(&l));
            prop_assert!(ae == al || e[ae] == e[al]);
        }

        #[test]
        fn epistemic_scores_ignore_noise(w in prop::collection::vec(0.01f64..1.0, 10), s1 in 1e-4f64..2.0, s2 in 1e-4f64..2.0) {
            let g = BinGrid::uniform(-1.0, 1.0, 10).unwrap();
            let latent = BinPmf::from_weights(w).unwrap();
            let a = Prediction::Binned(DecoupledPrediction::decoupled(&g, latent.clone(), s1, None).unwrap());
            let b = Prediction::Binned(DecoupledPrediction::decoupled(&g, latent, s2, None).unwrap());
            for rule in [AcqRule::Ei, AcqRule::LogEi, AcqRule::Lcb, AcqRule::Var] {
                let spec = AcqSpec::new(rule, Source::Epistemic);
                let sc = Scorer { spec: &spec, tau: Some(0.1), grid: None, targets: None };
                prop_assert_eq!(sc.score(std::slice::from_ref(&a)).unwrap(), sc.score(std::slice::from_ref(&b)).unwrap());
            }
        }
    }

    #[test]
    fn total_scores_respond_to_noise() {
        let g = BinGrid::uniform(-3.0, 3.0, 64).unwrap();
        let latent = crate::gp::discretize_gaussian(0.2, 0.1, &g).unwrap();
        let a = Prediction::Binned(DecoupledPrediction::decoupled(&g, latent.clone(), 0.05, None).unwrap());
        let b = Prediction::Binned(DecoupledPrediction::decoupled(&g, latent, 0.3, None).unwrap());
        for rule in [AcqRule::Ei, AcqRule::Lcb] {
            let spec = AcqSpec::new(rule, Source::Total);
            let sc = Scorer { spec: &spec, tau: Some(0.0), grid: None, targets: None };
            assert_ne!(sc.score(std::slice::from_ref(&a)).unwrap(), sc.score(std::slice::from_ref(&b)).unwrap());
        }
    }

    #[test]
    fn moment_sources() {
        let g = BinGrid::uniform(-3.0, 3.0, 120).unwrap();
        let latent = crate::gp::discretize_gaussian(0.3, 0.2, &g).unwrap();
        let tiny = Prediction::Binned(DecoupledPrediction::decoupled(&g, latent.clone(), 1e-12, None).unwrap());
        let (me, ve) = moments(&tiny, Source::Epistemic, 1e-12).unwrap();
        let (mt, vt) = moments(&tiny, Source::Total, 1e-12).unwrap();
        assert!((ve - vt).abs() <= 2e-12 && (me - mt).abs() < 1e-9);
        let hot = Prediction::Binned(DecoupledPrediction::decoupled(&g, BinPmf::one_hot(120, 60), 0.1, None).unwrap());
        assert_eq!(moments(&hot, Source::Epistemic, 1e-12).unwrap().1, 1e-12);
        let noisy = DecoupledPrediction::decoupled(&g, latent, 0.15, None).unwrap();
        let (_, v_total) = moments(&Prediction::Binned(noisy.clone()), Source::Total, 1e-12).unwrap();
        let w = g.max_width();
        assert!((v_total - noisy.obs_moments().variance).abs() < 0.5 * w * w);
        let tuned = Prediction::Binned(DecoupledPrediction::tuned(&g, convolve(&g, &BinPmf::uniform(120), 0.1).unwrap(), None).unwrap());
        assert!(matches!(moments(&tuned, Source::Epistemic, 1e-12), Err(Error::Contract(_))));
        assert!(moments(&tuned, Source::Total, 1e-12).is_ok());
    }

    #[test]
    fn epig_examples() {
        let r = vec![1.0, 0.0];
        let pure_noise = EpigPoint { representation: r.clone(), eta: 0.0 };
        let t = EpigPoint { representation: r.clone(), eta: 0.5 };
        assert_eq!(epig_proxy_scores(&[pure_noise], std::slice::from_ref(&t)), vec![0.0]);
        let orth = EpigPoint { representation: vec![0.0, 1.0], eta: 0.9 };
        assert_eq!(epig_proxy_scores(&[orth], std::slice::from_ref(&t)), vec![0.0]);
        let same = EpigPoint { representation: r, eta: 0.5 };
        let s = epig_proxy_scores(&[same], &[t])[0];
        assert!((s - 0.143_841_036_225_890_3).abs() < 1e-12);
    }

    #[test]
    fn pattern_search_finds_center() {
        let m = Mock(|x: &[f64]| (((x[0] - 0.3).powi(2) + (x[1] + 0.2).powi(2)), 0.05));
        let spec = AcqSpec::new(AcqRule::Ei, Source::Epistemic);
        let hist = vec![vec![0.9, 0.9]];
        let x = optimize_acquisition(&m, &hist, &[(-1.0, 1.0), (-1.0, 1.0)], &spec, 3).unwrap();
        assert!((x[0] - 0.3).abs() < 1e-3 && (x[1] + 0.2).abs() < 1e-3, "{x:?}");
    }

    #[test]
    fn degenerate_configs() {
        let m = Mock(|x: &[f64]| (x[0], 0.1 + x[0] * x[0]));
        let bounds = [(0.0, 2.0)];
        let spec = AcqSpec { n_restarts: 1, refine_steps: 0, sobol_count: 64, ..AcqSpec::new(AcqRule::Lcb, Source::Total) };
        let x = optimize_acquisition(&m, &[vec![1.0]], &bounds, &spec, 7).unwrap();
        let cands = sobol_in_bounds(64, &bounds, rng::derive_seed(7, 0, rng::tag::SOBOL)).unwrap();
        let best = cands
            .iter()
            .min_by(|a, b| {
                let s = |x: &Vec<f64>| lcb(x[0], 0.1 + x[0] * x[0], 2.0, 1e-12).unwrap();
                s(a).total_cmp(&s(b))
            })
            .unwrap();
        assert_eq!(&x, best);
        let rnd = AcqSpec::new(AcqRule::Random, Source::Total);
        let a = optimize_acquisition(&m, &[], &bounds, &rnd, 5).unwrap();
        assert_eq!(a, optimize_acquisition(&m, &[], &bounds, &rnd, 5).unwrap());
        assert!((0.0..2.0).contains(&a[0]));
        assert!(optimize_acquisition(&m, &[], &[(1.0, 1.0)], &spec, 0).is_err());
    }

    #[test]
    fn parses_cli_names() {
        assert_eq!("logei".parse::<AcqRule>().unwrap(), AcqRule::LogEi);
        assert_eq!("epi".parse::<Source>().unwrap(), Source::Epistemic);
        assert!("foo".parse::<AcqRule>().is_err());
        assert_eq!(AcqSpec::new(AcqRule::LogEi, Source::Total).label(), "logei-total");
    }
}
