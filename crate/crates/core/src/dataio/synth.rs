//! Synthetic MIDUS-shaped data with planted factor structure.
//!
//! Every participant gets `factor_latents` standard-normal scores per factor.
//! Numerical variables are affine in their factor's latents; categorical
//! variables bin a logistic transform of the same kind of score into ordinal
//! levels. Cognitive-project factors carry the participant's baseline
//! ability as their first latent, so they are informative for follow-up
//! outcomes. Outcomes are sums of documented terms over a subset of
//! "signal" factors. Masking is applied last and recorded.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Cell, Dataset};
use crate::codebook::{Codebook, Project, VariableKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingMechanism {
    /// Each cell independently absent.
    Mcar,
    /// Each (participant, factor) block absent as a unit.
    FactorBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeFn {
    Linear,
    Nonlinear,
}

fn default_signal() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_participants: usize,
    pub factor_latents: usize,
    pub noise_sd: f64,
    pub missing_rate: f64,
    pub missing_mechanism: MissingMechanism,
    pub outcome_fn: OutcomeFn,
    pub seed: u64,
    /// Number of non-cognitive factors that drive the outcomes.
    #[serde(default = "default_signal")]
    pub signal_factors: usize,
    /// Probability that a participant's follow-up outcomes are absent.
    #[serde(default)]
    pub attrition: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_participants: 200,
            factor_latents: 2,
            noise_sd: 0.3,
            missing_rate: 0.2,
            missing_mechanism: MissingMechanism::Mcar,
            outcome_fn: OutcomeFn::Nonlinear,
            seed: 0,
            signal_factors: default_signal(),
            attrition: 0.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthConfigError {
    #[error("invalid value for field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthConfigError> {
        let bad = |field, reason: String| Err(SynthConfigError::InvalidField { field, reason });
        if self.n_participants < 2 {
            return bad("n_participants", format!("{} < 2", self.n_participants));
        }
        if self.factor_latents == 0 {
            return bad("factor_latents", "must be positive".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd", format!("{} is not a finite non-negative number", self.noise_sd));
        }
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return bad("missing_rate", format!("{} is outside [0, 1]", self.missing_rate));
        }
        if !(0.0..=1.0).contains(&self.attrition) {
            return bad("attrition", format!("{} is outside [0, 1]", self.attrition));
        }
        if self.signal_factors == 0 {
            return bad("signal_factors", "must be positive".into());
        }
        Ok(())
    }
}

/// A function of latent scores, scaled to roughly unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Basis {
    Linear { factor: usize, latent: usize },
    Product { a: (usize, usize), b: (usize, usize) },
    Square { factor: usize, latent: usize },
    Abs { factor: usize, latent: usize },
}

const ABS_MEAN: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const ABS_SD: f64 = 0.602_810_275_866_086_4; // sqrt(1 - 2/pi)

impl Basis {
    pub fn eval(&self, z: impl Fn(usize, usize) -> f64) -> f64 {
        match *self {
            Basis::Linear { factor, latent } => z(factor, latent),
            Basis::Product { a, b } => z(a.0, a.1) * z(b.0, b.1),
            Basis::Square { factor, latent } => (z(factor, latent).powi(2) - 1.0) / std::f64::consts::SQRT_2,
            Basis::Abs { factor, latent } => (z(factor, latent).abs() - ABS_MEAN) / ABS_SD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub basis: Basis,
    pub weight: f64,
}

/// `value = Σ weight · basis(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub terms: Vec<Term>,
}

impl ScoreModel {
    pub fn eval(&self, z: impl Fn(usize, usize) -> f64 + Copy) -> f64 {
        self.terms.iter().map(|t| t.weight * t.basis.eval(z)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableModel {
    pub id: String,
    pub factor: usize,
    pub loadings: Vec<f64>,
    pub bias: f64,
    /// Output scale for numerical variables; unused for categorical ones.
    pub scale: f64,
}

/// Baseline and follow-up score models and their output affine maps.
///
/// `ef_m2 = max(0, EF_MEAN + EF_SCALE · (ef.eval(z) + noise))` and
/// `ef_m3 = max(0, ef_m2 + DECLINE_MEAN + DECLINE_SCALE · (ef_decline.eval(z) + noise))`;
/// EM follows the same pattern. `comp = (ef + em) / 2` at each wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub ef: ScoreModel,
    pub em: ScoreModel,
    pub ef_decline: ScoreModel,
    pub em_decline: ScoreModel,
}

pub const EF_MEAN: f64 = 50.0;
pub const EF_SCALE: f64 = 5.0;
pub const EM_MEAN: f64 = 20.0;
pub const EM_SCALE: f64 = 2.0;
pub const DECLINE_MEAN: f64 = -3.0;
pub const DECLINE_SCALE: f64 = 2.0;

/// Generator internals exported alongside a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub factor_names: Vec<String>,
    pub signal_factors: Vec<usize>,
    /// Per participant, `factor × factor_latents` scores (factor-major).
    pub latents: Vec<Vec<f64>>,
    pub variables: Vec<VariableModel>,
    pub outcome: OutcomeModel,
    /// Per participant, absence code per grid column (0 present, 1 missing,
    /// 2 invalid, 3 inapplicable).
    pub mask: Vec<Vec<u8>>,
}

impl GroundTruth {
    pub fn latent(&self, participant: usize, factor: usize, latent: usize) -> f64 {
        self.latents[participant][factor * self.config.factor_latents + latent]
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normalized_terms(rng: &mut ChaCha8Rng, bases: Vec<Basis>, total_weight: f64) -> Vec<Term> {
    let raw: Vec<f64> = bases.iter().map(|_| 0.5 + rng.random::<f64>()).collect();
    let norm = raw.iter().map(|w| w * w).sum::<f64>().sqrt();
    bases
        .into_iter()
        .zip(raw)
        .map(|(basis, w)| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Term { basis, weight: sign * total_weight * w / norm }
        })
        .collect()
}

fn score_model(rng: &mut ChaCha8Rng, signal: &[usize], latent: usize, nonlinear: bool) -> ScoreModel {
    let linear: Vec<Basis> = signal.iter().map(|&factor| Basis::Linear { factor, latent }).collect();
    if !nonlinear {
        return ScoreModel { terms: normalized_terms(rng, linear, 1.0) };
    }
    let mut nl = Vec::new();
    for (i, &f) in signal.iter().enumerate() {
        let g = signal[(i + 1) % signal.len()];
        if g != f {
            nl.push(Basis::Product { a: (f, latent), b: (g, latent) });
        }
        nl.push(if i % 2 == 0 {
            Basis::Square { factor: f, latent }
        } else {
            Basis::Abs { factor: f, latent }
        });
    }
    let mut terms = normalized_terms(rng, linear, 0.3f64.sqrt());
    terms.extend(normalized_terms(rng, nl, 0.7f64.sqrt()));
    ScoreModel { terms }
}

pub fn generate_synthetic(cb: &Codebook, cfg: &SynthConfig) -> Result<Synthetic, SynthConfigError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_participants;
    let n_lat = cfg.factor_latents;
    let factors = cb.factors();
    let n_factors = factors.len();

    let non_cognitive: Vec<usize> = (0..n_factors).filter(|&f| factors[f].project != Project::Cognitive).collect();
    if non_cognitive.is_empty() {
        return Err(SynthConfigError::InvalidField {
            field: "signal_factors",
            reason: "codebook has no non-cognitive factor to carry signal".into(),
        });
    }
    let signal: Vec<usize> = non_cognitive.iter().copied().take(cfg.signal_factors).collect();
    let nonlinear = cfg.outcome_fn == OutcomeFn::Nonlinear;
    let outcome = OutcomeModel {
        ef: score_model(&mut rng, &signal, 0, nonlinear),
        em: score_model(&mut rng, &signal, 1 % n_lat, nonlinear),
        ef_decline: score_model(&mut rng, &signal, (n_lat - 1) % n_lat, nonlinear),
        em_decline: score_model(&mut rng, &signal, 0, nonlinear),
    };

    let included: Vec<usize> = cb
        .variables()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.included)
        .map(|(i, _)| i)
        .collect();
    let var_models: Vec<VariableModel> = included
        .iter()
        .map(|&i| {
            let v = &cb.variables()[i];
            let factor = cb.factor_position(&v.factor).expect("validated codebook");
            let loadings: Vec<f64> = (0..n_lat).map(|_| normal(&mut rng)).collect();
            let (bias, scale) = match v.kind {
                VariableKind::Numerical => (rng.random_range(-5.0..5.0), rng.random_range(0.5..3.0)),
                VariableKind::Categorical => (0.5 * normal(&mut rng), 1.0),
            };
            VariableModel { id: v.id.clone(), factor, loadings, bias, scale }
        })
        .collect();

    let mut latents = Vec::with_capacity(n);
    let mut outcome_values: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    let names = ["COMP_M2", "EF_M2", "EM_M2", "COMP_M3", "EF_M3", "EM_M3"];
    for name in names {
        outcome_values.insert(name.to_string(), Vec::with_capacity(n));
    }
    let push = |map: &mut BTreeMap<String, Vec<Option<f64>>>, k: &str, v: Option<f64>| {
        map.get_mut(k).expect("outcome registered").push(v);
    };
    let cognitive: Vec<usize> = (0..n_factors).filter(|&f| factors[f].project == Project::Cognitive).collect();
    for _ in 0..n {
        let mut z: Vec<f64> = (0..n_factors * n_lat).map(|_| normal(&mut rng)).collect();
        let zf = |f: usize, l: usize| z[f * n_lat + l];
        let g_ef = outcome.ef.eval(zf);
        let g_em = outcome.em.eval(zf);
        let h_ef = outcome.ef_decline.eval(zf);
        let h_em = outcome.em_decline.eval(zf);
        let mut noise = || cfg.noise_sd * normal(&mut rng);
        let ef2 = (EF_MEAN + EF_SCALE * (g_ef + noise())).max(0.0);
        let em2 = (EM_MEAN + EM_SCALE * (g_em + noise())).max(0.0);
        let ef3 = (ef2 + DECLINE_MEAN + DECLINE_SCALE * (h_ef + noise())).max(0.0);
        let em3 = (em2 + DECLINE_MEAN + DECLINE_SCALE * (h_em + noise())).max(0.0);
        let dropped = cfg.attrition > 0.0 && rng.random::<f64>() < cfg.attrition;
        for (k, &f) in cognitive.iter().enumerate() {
            z[f * n_lat] = if k % 2 == 0 { g_ef } else { g_em };
        }
        push(&mut outcome_values, "EF_M2", Some(ef2));
        push(&mut outcome_values, "EM_M2", Some(em2));
        push(&mut outcome_values, "COMP_M2", Some(0.5 * (ef2 + em2)));
        let follow = |v: f64| (!dropped).then_some(v);
        push(&mut outcome_values, "EF_M3", follow(ef3));
        push(&mut outcome_values, "EM_M3", follow(em3));
        push(&mut outcome_values, "COMP_M3", follow(0.5 * (ef3 + em3)));
        latents.push(z);
    }

    let p = included.len();
    let mut cells = Vec::with_capacity(n * p);
    for z in &latents {
        for (col, vm) in var_models.iter().enumerate() {
            let spec = &cb.variables()[included[col]];
            let score: f64 = vm
                .loadings
                .iter()
                .enumerate()
                .map(|(l, w)| w * z[vm.factor * n_lat + l])
                .sum::<f64>()
                + cfg.noise_sd * normal(&mut rng);
            cells.push(match spec.kind {
                VariableKind::Numerical => Cell::Number(vm.bias + vm.scale * score),
                VariableKind::Categorical => {
                    let k = spec.levels.len();
                    let prob = 1.0 / (1.0 + (-(score + vm.bias)).exp());
                    Cell::Level(((prob * k as f64) as usize).min(k - 1) as u32)
                }
            });
        }
    }

    let factor_of_col: Vec<usize> = var_models.iter().map(|v| v.factor).collect();
    let mut mask = Vec::with_capacity(n);
    for row in 0..n {
        let mut codes = vec![0u8; p];
        match cfg.missing_mechanism {
            MissingMechanism::Mcar => {
                for code in codes.iter_mut() {
                    if rng.random::<f64>() < cfg.missing_rate {
                        *code = absence_code(&mut rng);
                    }
                }
            }
            MissingMechanism::FactorBlock => {
                for f in 0..n_factors {
                    if rng.random::<f64>() < cfg.missing_rate {
                        let code = absence_code(&mut rng);
                        for (col, &fc) in factor_of_col.iter().enumerate() {
                            if fc == f {
                                codes[col] = code;
                            }
                        }
                    }
                }
            }
        }
        for (col, &code) in codes.iter().enumerate() {
            let cell = &mut cells[row * p + col];
            *cell = match code {
                0 => *cell,
                1 => Cell::Missing,
                2 => Cell::Invalid,
                _ => Cell::Inapplicable,
            };
        }
        mask.push(codes);
    }

    let width = n.to_string().len();
    let ids: Vec<String> = (0..n).map(|i| format!("P{i:0width$}")).collect();
    let dataset = Dataset::new(Arc::new(cb.clone()), ids, cells, outcome_values)
        .map_err(|e| SynthConfigError::InvalidField { field: "codebook", reason: e.to_string() })?;
    let truth = GroundTruth {
        config: cfg.clone(),
        factor_names: factors.iter().map(|f| f.name.clone()).collect(),
        signal_factors: signal,
        latents,
        variables: var_models,
        outcome,
        mask,
    };
    Ok(Synthetic { dataset, truth })
}

fn absence_code(rng: &mut ChaCha8Rng) -> u8 {
    let u: f64 = rng.random();
    if u < 0.8 {
        1
    } else if u < 0.9 {
        2
    } else {
        3
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{synthetic_codebook, SyntheticLayout};

    fn layout(n_factors: usize) -> Codebook {
        synthetic_codebook(&SyntheticLayout { n_factors, ..Default::default() })
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cb = layout(10);
        let cfg = SynthConfig { seed: 7, ..Default::default() };
        let a = generate_synthetic(&cb, &cfg).unwrap();
        let b = generate_synthetic(&cb, &cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let c = generate_synthetic(&cb, &SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn zero_missing_rate_has_no_sparsity() {
        let cb = layout(8);
        let cfg = SynthConfig { missing_rate: 0.0, ..Default::default() };
        let s = generate_synthetic(&cb, &cfg).unwrap();
        assert_eq!(s.dataset.sparsity(), 0);
    }

    #[test]
    fn mask_matches_sparsity() {
        let cb = layout(12);
        for mechanism in [MissingMechanism::Mcar, MissingMechanism::FactorBlock] {
            let cfg = SynthConfig { missing_rate: 0.3, missing_mechanism: mechanism, ..Default::default() };
            let s = generate_synthetic(&cb, &cfg).unwrap();
            let from_mask: Vec<u32> =
                s.truth.mask.iter().map(|r| r.iter().filter(|&&c| c != 0).count() as u32).collect();
            assert_eq!(from_mask, s.dataset.sparsity_per_row());
        }
    }

    #[test]
    fn factor_block_masks_whole_factors() {
        let cb = layout(6);
        let cfg = SynthConfig {
            missing_rate: 0.5,
            missing_mechanism: MissingMechanism::FactorBlock,
            ..Default::default()
        };
        let s = generate_synthetic(&cb, &cfg).unwrap();
        let per_factor = 4;
        for row in &s.truth.mask {
            for block in row.chunks(per_factor) {
                assert!(block.iter().all(|&c| (c == 0) == (block[0] == 0)));
            }
        }
    }

    #[test]
    fn invalid_rates_name_the_field() {
        let cfg = SynthConfig { missing_rate: 1.5, ..Default::default() };
        match cfg.validate() {
            Err(SynthConfigError::InvalidField { field, .. }) => assert_eq!(field, "missing_rate"),
            other => panic!("unexpected {other:?}"),
        }
        let cfg = SynthConfig { n_participants: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn attrition_blanks_follow_up_only() {
        let cb = layout(6);
        let cfg = SynthConfig { attrition: 0.5, ..Default::default() };
        let s = generate_synthetic(&cb, &cfg).unwrap();
        let m2 = s.dataset.outcome("EF_M2").unwrap();
        let m3 = s.dataset.outcome("EF_M3").unwrap();
        assert!(m2.iter().all(Option::is_some));
        let lost = m3.iter().filter(|v| v.is_none()).count();
        assert!(lost > 50 && lost < 150, "lost {lost}");
    }
}
