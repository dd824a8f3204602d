//! Seeded synthetic channel traces.
//!
//! Each link is a slow first-order autoregressive shadowing process (in dB)
//! plus a two-state blocking chain that adds a fixed attenuation while the
//! link is blocked. Long blocked sojourns stand in for a sleeping body
//! lying on or over a radio. Packets are independently lost with a fixed
//! probability per slot.
//!
//! Every link draws from its own ChaCha stream selected by a hash of the
//! link label, so a link's samples depend only on the seed, its label and
//! its parameters.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{ChannelTraceSet, LinkKey, DEFAULT_DELTA_MS, MAX_GAIN_DB, MIN_GAIN_DB};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub mean_gain_db: f64,
    pub shadow_sigma_db: f64,
    /// One-step autocorrelation of the shadowing process.
    pub shadow_corr: f64,
    pub block_enter_prob: f64,
    pub block_exit_prob: f64,
    pub block_atten_db: f64,
    pub loss_prob: f64,
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} (got {self:?})")));
        if !self.mean_gain_db.is_finite() {
            return bad("mean_gain_db must be finite");
        }
        if !(self.shadow_sigma_db >= 0.0 && self.shadow_sigma_db.is_finite()) {
            return bad("shadow_sigma_db must be >= 0");
        }
        if !(0.0..1.0).contains(&self.shadow_corr) {
            return bad("shadow_corr must lie in [0, 1)");
        }
        if !(self.block_enter_prob > 0.0 && self.block_enter_prob <= 1.0) {
            return bad("block_enter_prob must lie in (0, 1]");
        }
        if !(self.block_exit_prob > 0.0 && self.block_exit_prob <= 1.0) {
            return bad("block_exit_prob must lie in (0, 1]");
        }
        if !(self.block_atten_db >= 0.0 && self.block_atten_db.is_finite()) {
            return bad("block_atten_db must be >= 0");
        }
        if !(0.0..1.0).contains(&self.loss_prob) {
            return bad("loss_prob must lie in [0, 1)");
        }
        Ok(())
    }

    /// Long-run fraction of slots spent blocked.
    pub fn stationary_blocked(&self) -> f64 {
        self.block_enter_prob / (self.block_enter_prob + self.block_exit_prob)
    }
}

/// Per-link overrides on top of the scenario's `default` block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverrides {
    pub mean_gain_db: Option<f64>,
    pub shadow_sigma_db: Option<f64>,
    pub shadow_corr: Option<f64>,
    pub block_enter_prob: Option<f64>,
    pub block_exit_prob: Option<f64>,
    pub block_atten_db: Option<f64>,
    pub loss_prob: Option<f64>,
}

impl LinkOverrides {
    fn apply(&self, base: Option<LinkParams>, link: &str) -> Result<LinkParams> {
        let pick = |v: Option<f64>, d: Option<f64>, name: &str| {
            v.or(d).ok_or_else(|| {
                Error::Config(format!("link {link}: {name} not set and no default block"))
            })
        };
        Ok(LinkParams {
            mean_gain_db: pick(
                self.mean_gain_db,
                base.map(|b| b.mean_gain_db),
                "mean_gain_db",
            )?,
            shadow_sigma_db: pick(
                self.shadow_sigma_db,
                base.map(|b| b.shadow_sigma_db),
                "shadow_sigma_db",
            )?,
            shadow_corr: pick(self.shadow_corr, base.map(|b| b.shadow_corr), "shadow_corr")?,
            block_enter_prob: pick(
                self.block_enter_prob,
                base.map(|b| b.block_enter_prob),
                "block_enter_prob",
            )?,
            block_exit_prob: pick(
                self.block_exit_prob,
                base.map(|b| b.block_exit_prob),
                "block_exit_prob",
            )?,
            block_atten_db: pick(
                self.block_atten_db,
                base.map(|b| b.block_atten_db),
                "block_atten_db",
            )?,
            loss_prob: pick(self.loss_prob, base.map(|b| b.loss_prob), "loss_prob")?,
        })
    }
}

fn default_delta() -> u32 {
    DEFAULT_DELTA_MS
}

fn default_subject() -> String {
    "synthetic".into()
}

/// Scenario file contents (TOML):
///
/// ```toml
/// n_slots = 240000
/// delta_ms = 15
/// seed = 7
///
/// [default]
/// mean_gain_db = -75.0
/// shadow_sigma_db = 4.0
/// shadow_corr = 0.995
/// block_enter_prob = 0.0005
/// block_exit_prob = 0.002
/// block_atten_db = 20.0
/// loss_prob = 0.02
///
/// [links."H_f-L_a"]
/// mean_gain_db = -82.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n_slots: usize,
    #[serde(default = "default_delta")]
    pub delta_ms: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_subject")]
    pub subject: String,
    #[serde(default)]
    pub default: Option<LinkParams>,
    #[serde(default)]
    pub links: BTreeMap<String, LinkOverrides>,
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.resolve()?;
        Ok(spec)
    }

    /// Uniform parameters on every measurable link.
    pub fn uniform(n_slots: usize, seed: u64, params: LinkParams) -> Self {
        ScenarioSpec {
            n_slots,
            delta_ms: DEFAULT_DELTA_MS,
            seed,
            subject: default_subject(),
            default: Some(params),
            links: BTreeMap::new(),
        }
    }

    pub fn set_link(&mut self, link: LinkKey, params: LinkParams) {
        self.links.insert(
            link.to_string(),
            LinkOverrides {
                mean_gain_db: Some(params.mean_gain_db),
                shadow_sigma_db: Some(params.shadow_sigma_db),
                shadow_corr: Some(params.shadow_corr),
                block_enter_prob: Some(params.block_enter_prob),
                block_exit_prob: Some(params.block_exit_prob),
                block_atten_db: Some(params.block_atten_db),
                loss_prob: Some(params.loss_prob),
            },
        );
    }

    /// Fully resolved, validated parameters for every measurable link.
    pub fn resolve(&self) -> Result<BTreeMap<LinkKey, LinkParams>> {
        if self.n_slots == 0 {
            return Err(Error::Config("n_slots must be at least 1".into()));
        }
        if self.delta_ms == 0 {
            return Err(Error::Config("delta_ms must be positive".into()));
        }
        let mut overrides: BTreeMap<LinkKey, LinkOverrides> = BTreeMap::new();
        for (label, o) in &self.links {
            let key: LinkKey = label.parse()?;
            if overrides.insert(key, *o).is_some() {
                return Err(Error::Config(format!("link {label} declared twice")));
            }
        }
        LinkKey::measurable()
            .into_iter()
            .map(|k| {
                let label = k.to_string();
                let p = overrides
                    .get(&k)
                    .copied()
                    .unwrap_or_default()
                    .apply(self.default, &label)?;
                p.validate()
                    .map_err(|e| Error::Config(format!("link {label}: {e}")))?;
                Ok((k, p))
            })
            .collect()
    }
}

// FNV-1a; stable across platforms and releases, unlike std's hasher.
fn label_stream(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn link_rng(seed: u64, link: LinkKey) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_stream(&link.to_string()));
    rng
}

/// Samples one link. `None` marks a lost packet.
pub fn generate_link(
    params: &LinkParams,
    n_slots: usize,
    link: LinkKey,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    params.validate()?;
    let mut rng = link_rng(seed, link);
    let innovation =
        params.shadow_sigma_db * (1.0 - params.shadow_corr * params.shadow_corr).sqrt();

    let mut blocked = false;
    let mut shadow = 0.0;
    let mut out = Vec::with_capacity(n_slots);
    for t in 0..n_slots {
        let u_block: f64 = rng.gen();
        let z: f64 = rng.sample(StandardNormal);
        let u_loss: f64 = rng.gen();
        if t == 0 {
            blocked = u_block < params.stationary_blocked();
            shadow = params.shadow_sigma_db * z;
        } else {
            blocked = if blocked {
                u_block >= params.block_exit_prob
            } else {
                u_block < params.block_enter_prob
            };
            shadow = params.shadow_corr * shadow + innovation * z;
        }
        let atten = if blocked { params.block_atten_db } else { 0.0 };
        let gain = (params.mean_gain_db + shadow - atten).clamp(MIN_GAIN_DB, MAX_GAIN_DB);
        out.push((u_loss >= params.loss_prob).then_some(gain));
    }
    Ok(out)
}

/// Generates every measurable link. Links are sampled on separate threads;
/// the output is independent of scheduling.
pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> Result<ChannelTraceSet> {
    let params = spec.resolve()?;
    let traces = std::thread::scope(|scope| {
        let handles: Vec<_> = params
            .iter()
            .map(|(&k, p)| {
                (
                    k,
                    scope.spawn(move || generate_link(p, spec.n_slots, k, seed)),
                )
            })
            .collect();
        handles
            .into_iter()
            .map(|(k, h)| Ok((k, h.join().expect("generator thread panicked")?)))
            .collect::<Result<BTreeMap<_, _>>>()
    })?;
    ChannelTraceSet::new(spec.delta_ms, spec.subject.clone(), traces)
}
