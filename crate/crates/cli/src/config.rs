//! Experiment configuration (TOML).
//!
//! Unknown keys are rejected everywhere. Semantic errors carry the line of the
//! table they refer to.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use swgtoy_core::swg::corner_pair;
use swgtoy_core::{
    plan_windows_rect, ClassId, ClassPolicy, Conditioning, Dataset, DenoiserHandle, DenoiserSpec,
    GridShape, GuidanceRule, GuidanceTerm, IntervalOrigin, NoiseSchedule, SamplerOptions,
    SlidingWindowDenoiser, StepInterval, WindowPlan,
};
use toml::Spanned;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    /// Per-trajectory CSVs written for each (method, w) cell.
    #[serde(default = "default_dump")]
    pub dump_trajectories: usize,
    /// Noise level of the probe input used for field dumps in `swg-demo`.
    #[serde(default = "default_probe_sigma")]
    pub probe_sigma: f64,
    pub out: Option<PathBuf>,
    pub dataset: Spanned<DatasetConfig>,
    pub grid: Option<Spanned<GridConfig>>,
    pub schedule: Option<Spanned<ScheduleConfig>>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub method: Vec<Spanned<MethodConfig>>,
}

fn default_trajectories() -> usize {
    100
}

fn default_dump() -> usize {
    3
}

fn default_probe_sigma() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    Triangle {
        #[serde(default = "one")]
        circumradius: f64,
    },
    Cloud {
        n: usize,
        #[serde(default = "two")]
        dim: usize,
        std: f64,
        #[serde(default)]
        seed: u64,
    },
    Inline {
        points: Vec<Vec<f64>>,
        labels: Option<Vec<ClassId>>,
    },
    /// JSON document `{"d", "points", "labels"?}`, relative to the config file.
    File { path: PathBuf },
    CornerPair {
        height: usize,
        width: Option<usize>,
        #[serde(default = "one_usize")]
        channels: usize,
        patch: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn two() -> usize {
    2
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub height: usize,
    pub width: usize,
    #[serde(default = "one_usize")]
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKindConfig {
    #[default]
    PowerRho,
    Linear,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub kind: ScheduleKindConfig,
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
    #[serde(default = "default_sigma_max")]
    pub sigma_max: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_sigma_min() -> f64 {
    swgtoy_core::sampler::DEFAULT_SIGMA_MIN
}

fn default_sigma_max() -> f64 {
    swgtoy_core::sampler::DEFAULT_SIGMA_MAX
}

fn default_steps() -> usize {
    40
}

fn default_rho() -> f64 {
    swgtoy_core::sampler::DEFAULT_RHO
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKindConfig::default(),
            sigma_min: default_sigma_min(),
            sigma_max: default_sigma_max(),
            steps: default_steps(),
            rho: default_rho(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_divergence")]
    pub divergence_factor: f64,
}

fn default_divergence() -> f64 {
    SamplerOptions::default().divergence_factor
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            divergence_factor: default_divergence(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    None,
    Cfg,
    Wmg,
    OptimalWmg,
    Swg,
    Mswg,
    Combined,
}

impl MethodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::None => "none",
            MethodKind::Cfg => "cfg",
            MethodKind::Wmg => "wmg",
            MethodKind::OptimalWmg => "optimal-wmg",
            MethodKind::Swg => "swg",
            MethodKind::Mswg => "mswg",
            MethodKind::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq, Eq)]
#[serde(untagged)]
pub enum ClassSpec {
    Fixed(ClassId),
    Named(String),
}

#[derive(Debug, Clone, Deserialize, PartialEq, Eq)]
#[serde(untagged)]
pub enum MaskSpec {
    Bits(Vec<u8>),
    /// Only `"swg-overlap"` is accepted.
    Source(String),
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OriginConfig {
    #[default]
    HighNoise,
    LowNoise,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: Option<String>,
    pub kind: MethodKind,
    #[serde(default = "default_delta_pos")]
    pub delta_pos: f64,
    pub delta_neg: Option<f64>,
    #[serde(default)]
    pub weights: Vec<f64>,
    /// Use class-conditional positive and negative models (WMG only).
    #[serde(default)]
    pub conditional: bool,
    pub classes: Option<ClassSpec>,
    pub interval: Option<[usize; 2]>,
    #[serde(default)]
    pub interval_origin: OriginConfig,
    pub mask: Option<MaskSpec>,
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub windows: Option<usize>,
    #[serde(default)]
    pub terms: Vec<TermConfig>,
}

fn default_delta_pos() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum TermKind {
    Cfg,
    Wmg,
    Swg,
    Mswg,
}

/// One rule of a combined method; rules are mixed with convex `alpha`s.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub kind: TermKind,
    pub alpha: f64,
    /// Overrides the swept weight for this term.
    pub weight: Option<f64>,
    pub delta_neg: Option<f64>,
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub windows: Option<usize>,
}

/// Weight label: a number or `opt` for the pointwise optimal weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightLabel {
    Value(f64),
    Optimal,
}

impl std::fmt::Display for WeightLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightLabel::Value(w) => write!(f, "{w}"),
            WeightLabel::Optimal => f.write_str("opt"),
        }
    }
}

/// A method resolved against the dataset, ready to sample.
#[derive(Debug, Clone)]
pub struct ResolvedMethod {
    pub name: String,
    pub kind: MethodKind,
    pub cells: Vec<(WeightLabel, GuidanceRule)>,
    pub policy: ClassPolicy,
    /// Optimal denoiser with the positive's conditioning.
    pub oracle: DenoiserHandle,
    pub plan: Option<WindowPlan>,
    pub masked: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: Arc<Dataset>,
    pub grid: Option<GridShape>,
    pub schedule: NoiseSchedule,
    pub options: SamplerOptions,
    pub methods: Vec<ResolvedMethod>,
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

struct Ctx<'a> {
    text: &'a str,
    origin: &'a str,
}

impl Ctx<'_> {
    fn err<T>(
        &self,
        span: std::ops::Range<usize>,
        msg: impl std::fmt::Display,
    ) -> Result<T, CliError> {
        Err(CliError::Config(format!(
            "{}:{}: {msg}",
            self.origin,
            line_of(self.text, span.start)
        )))
    }
}

pub fn load(path: &Path) -> Result<Experiment, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse(&text, &path.display().to_string(), base)
}

/// Parses and validates a config; `base` resolves relative dataset paths.
pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Experiment, CliError> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    let ctx = Ctx { text, origin };

    let ds_span = config.dataset.span();
    let (dataset, implied_grid) =
        build_dataset(config.dataset.get_ref(), base).or_else(|e| ctx.err(ds_span.clone(), e))?;
    let grid = match (&config.grid, implied_grid) {
        (Some(g), _) => {
            let shape = GridShape::new(g.get_ref().height, g.get_ref().width, g.get_ref().channels)
                .or_else(|e| ctx.err(g.span(), e))?;
            if shape.dim() != dataset.dim() {
                return ctx.err(
                    g.span(),
                    format!(
                        "grid has {} entries but dataset points have {}",
                        shape.dim(),
                        dataset.dim()
                    ),
                );
            }
            Some(shape)
        }
        (None, implied) => implied,
    };
    let dataset = Arc::new(dataset);

    let default_schedule = ScheduleConfig::default();
    let (s, schedule_span) = match &config.schedule {
        Some(s) => (s.get_ref(), s.span()),
        None => (&default_schedule, 0..0),
    };
    let schedule = match s.kind {
        ScheduleKindConfig::PowerRho => {
            NoiseSchedule::power_rho(s.sigma_min, s.sigma_max, s.steps, s.rho)
        }
        ScheduleKindConfig::Linear => NoiseSchedule::linear(s.sigma_min, s.sigma_max, s.steps),
    };
    schedule.validate().or_else(|e| ctx.err(schedule_span, e))?;

    if config.trajectories == 0 {
        return ctx.err(0..0, "trajectories must be at least 1");
    }
    if !(config.probe_sigma.is_finite() && config.probe_sigma > 0.0) {
        return ctx.err(0..0, "probe_sigma must be positive");
    }
    let f = config.sampler.divergence_factor;
    if f.is_nan() || f <= 0.0 {
        return ctx.err(0..0, "sampler.divergence_factor must be positive");
    }
    let options = SamplerOptions {
        divergence_factor: f,
    };

    if config.method.is_empty() {
        return ctx.err(0..0, "at least one [[method]] is required");
    }
    let mut methods = Vec::with_capacity(config.method.len());
    let mut names = std::collections::BTreeSet::new();
    for m in &config.method {
        let resolved = resolve_method(m.get_ref(), &dataset, grid, &schedule)
            .or_else(|e| ctx.err(m.span(), e))?;
        if !names.insert(resolved.name.clone()) {
            return ctx.err(
                m.span(),
                format!("duplicate method name '{}'", resolved.name),
            );
        }
        methods.push(resolved);
    }
    Ok(Experiment {
        config,
        dataset,
        grid,
        schedule,
        options,
        methods,
    })
}

fn build_dataset(cfg: &DatasetConfig, base: &Path) -> Result<(Dataset, Option<GridShape>), String> {
    let s = |e: swgtoy_core::Error| e.to_string();
    Ok(match cfg {
        DatasetConfig::Triangle { circumradius } => {
            if !(circumradius.is_finite() && *circumradius > 0.0) {
                return Err(format!("circumradius must be positive, got {circumradius}"));
            }
            (Dataset::triangle(*circumradius), None)
        }
        DatasetConfig::Cloud { n, dim, std, seed } => (
            Dataset::gaussian_cloud(*n, *dim, *std, *seed).map_err(s)?,
            None,
        ),
        DatasetConfig::Inline { points, labels } => (
            Dataset::new(points.clone(), labels.clone()).map_err(s)?,
            None,
        ),
        DatasetConfig::File { path } => {
            let full = base.join(path);
            if !full.exists() {
                return Err(format!("dataset file {} does not exist", full.display()));
            }
            (Dataset::load_json(&full).map_err(s)?, None)
        }
        DatasetConfig::CornerPair {
            height,
            width,
            channels,
            patch,
        } => {
            let shape = GridShape::new(*height, width.unwrap_or(*height), *channels).map_err(s)?;
            (corner_pair(shape, *patch).map_err(s)?, Some(shape))
        }
    })
}

fn check_delta(name: &str, delta: f64) -> Result<(), String> {
    if delta.is_finite() && delta >= 0.0 {
        Ok(())
    } else {
        Err(format!("{name} must be >= 0, got {delta}"))
    }
}

fn spec(
    dataset: &Arc<Dataset>,
    delta: f64,
    conditioning: Conditioning,
) -> Result<DenoiserSpec, String> {
    DenoiserSpec::with_delta(dataset.clone(), delta)
        .and_then(|d| d.with_conditioning(conditioning))
        .map_err(|e| e.to_string())
}

fn plan_for(
    grid: Option<GridShape>,
    k: Option<usize>,
    l: Option<usize>,
    windows: Option<usize>,
) -> Result<WindowPlan, String> {
    let grid = grid.ok_or(
        "sliding-window guidance needs a grid: use a corner-pair dataset or a [grid] table",
    )?;
    let k = k.ok_or("missing crop size k")?;
    let n = windows.ok_or("missing window count 'windows'")?;
    plan_windows_rect(grid, k, l.unwrap_or(k), n).map_err(|e| e.to_string())
}

fn swg_negative(pos: &DenoiserSpec, plan: &WindowPlan) -> Result<DenoiserHandle, String> {
    Ok(Arc::new(
        SlidingWindowDenoiser::crop_restricted(pos, plan.clone()).map_err(|e| e.to_string())?,
    ))
}

fn empty_mask_warning(plan: &WindowPlan) -> String {
    format!(
        "M-SWG mask is empty for H={}, k={}, N={} (r = {}); guidance reduces to the positive predictor",
        plan.shape.height,
        plan.k,
        plan.n_windows(),
        plan.overlap_ratio
    )
}

fn resolve_method(
    m: &MethodConfig,
    dataset: &Arc<Dataset>,
    grid: Option<GridShape>,
    schedule: &NoiseSchedule,
) -> Result<ResolvedMethod, String> {
    check_delta("delta_pos", m.delta_pos)?;
    let name = m
        .name
        .clone()
        .unwrap_or_else(|| m.kind.as_str().to_string());
    if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
        return Err(format!("invalid method name '{name}'"));
    }
    let has_cfg_term = m.terms.iter().any(|t| t.kind == TermKind::Cfg);
    let conditional = m.kind == MethodKind::Cfg || m.conditional || has_cfg_term;
    if m.conditional
        && !matches!(
            m.kind,
            MethodKind::Wmg | MethodKind::Combined | MethodKind::Swg | MethodKind::Mswg
        )
    {
        return Err(format!(
            "'conditional' is not supported for {} methods",
            m.kind.as_str()
        ));
    }
    if m.kind != MethodKind::Combined && !m.terms.is_empty() {
        return Err("'terms' is only valid for combined methods".into());
    }
    let conditioning = if conditional {
        if dataset.labels().is_none() {
            return Err("class-conditional guidance needs a labelled dataset".into());
        }
        Conditioning::PerSample
    } else {
        Conditioning::Unconditional
    };
    let policy = match (&m.classes, conditional) {
        (None, true) => ClassPolicy::round_robin(dataset).map_err(|e| e.to_string())?,
        (None, false) => ClassPolicy::None,
        (Some(ClassSpec::Named(s)), _) if s == "round-robin" => {
            ClassPolicy::round_robin(dataset).map_err(|e| e.to_string())?
        }
        (Some(ClassSpec::Named(s)), false) if s == "none" => ClassPolicy::None,
        (Some(ClassSpec::Named(s)), true) if s == "none" => {
            return Err(
                "a class-conditional method needs classes = \"round-robin\" or a class id".into(),
            );
        }
        (Some(ClassSpec::Named(s)), _) => return Err(format!("unknown class policy '{s}'")),
        (Some(ClassSpec::Fixed(c)), _) => {
            if !dataset.has_class(*c) {
                return Err(format!("class {c} has no points in the dataset"));
            }
            ClassPolicy::Fixed(*c)
        }
    };

    let pos_spec = spec(dataset, m.delta_pos, conditioning)?;
    let pos: DenoiserHandle = Arc::new(pos_spec.clone());
    let oracle: DenoiserHandle = Arc::new(spec(dataset, 0.0, conditioning)?);

    let weights: Vec<f64> = match m.kind {
        MethodKind::None => {
            if !m.weights.is_empty() {
                return Err("method 'none' takes no weights".into());
            }
            vec![0.0]
        }
        MethodKind::OptimalWmg => {
            if !m.weights.is_empty() {
                return Err("optimal-wmg computes its own weight; remove 'weights'".into());
            }
            Vec::new()
        }
        _ => {
            if m.weights.is_empty() {
                return Err("'weights' must list at least one guidance weight".into());
            }
            if let Some(w) = m.weights.iter().find(|w| !w.is_finite()) {
                return Err(format!("weight {w} is not finite"));
            }
            m.weights.clone()
        }
    };

    let mut warnings = Vec::new();
    let mut plan = None;
    let mut masked = false;

    // Builds the rule for weight `w` before mask and interval are applied.
    let base_rule: Box<dyn Fn(f64) -> Result<GuidanceRule, String>> = match m.kind {
        MethodKind::None => {
            let pos = pos.clone();
            Box::new(move |_| Ok(GuidanceRule::new(pos.clone())))
        }
        MethodKind::Cfg | MethodKind::Wmg => {
            let delta_neg = m.delta_neg.ok_or("missing delta_neg")?;
            check_delta("delta_neg", delta_neg)?;
            if m.kind == MethodKind::Wmg && delta_neg <= m.delta_pos {
                tracing::warn!(method = %name, "delta_neg <= delta_pos: the negative is not weaker than the positive");
            }
            let neg_cond = if m.kind == MethodKind::Cfg {
                Conditioning::Unconditional
            } else {
                conditioning
            };
            let neg: DenoiserHandle = Arc::new(spec(dataset, delta_neg, neg_cond)?);
            let pos = pos.clone();
            Box::new(move |w| {
                GuidanceRule::single(pos.clone(), neg.clone(), w).map_err(|e| e.to_string())
            })
        }
        MethodKind::OptimalWmg => {
            let delta_neg = m.delta_neg.ok_or("missing delta_neg")?;
            check_delta("delta_neg", delta_neg)?;
            let neg: DenoiserHandle = Arc::new(spec(dataset, delta_neg, conditioning)?);
            let (pos, oracle) = (pos.clone(), oracle.clone());
            Box::new(move |_| {
                GuidanceRule::new(pos.clone())
                    .with_term(GuidanceTerm::optimal(neg.clone(), oracle.clone()))
                    .map_err(|e| e.to_string())
            })
        }
        MethodKind::Swg | MethodKind::Mswg => {
            let p = plan_for(grid, m.k, m.l, m.windows)?;
            let neg = swg_negative(&pos_spec, &p)?;
            masked = m.kind == MethodKind::Mswg;
            if masked && p.overlap().is_mask_empty() {
                warnings.push(empty_mask_warning(&p));
            }
            plan = Some(p);
            let pos = pos.clone();
            Box::new(move |w| {
                GuidanceRule::single(pos.clone(), neg.clone(), w).map_err(|e| e.to_string())
            })
        }
        MethodKind::Combined => {
            if m.terms.is_empty() {
                return Err("combined methods need at least one [[method.terms]] entry".into());
            }
            let mut parts: Vec<(TermConfig, DenoiserHandle, Option<Vec<bool>>)> = Vec::new();
            for t in &m.terms {
                let (neg, mask): (DenoiserHandle, Option<Vec<bool>>) = match t.kind {
                    TermKind::Cfg | TermKind::Wmg => {
                        let delta_neg = t.delta_neg.ok_or("term is missing delta_neg")?;
                        check_delta("delta_neg", delta_neg)?;
                        let c = if t.kind == TermKind::Cfg {
                            Conditioning::Unconditional
                        } else {
                            conditioning
                        };
                        (Arc::new(spec(dataset, delta_neg, c)?), None)
                    }
                    TermKind::Swg | TermKind::Mswg => {
                        let p = plan_for(grid, t.k, t.l, t.windows)?;
                        let overlap = p.overlap();
                        let mask = (t.kind == TermKind::Mswg).then(|| overlap.flat_mask());
                        if mask.is_some() && overlap.is_mask_empty() {
                            warnings.push(empty_mask_warning(&p));
                        }
                        (swg_negative(&pos_spec, &p)?, mask)
                    }
                };
                if let Some(w) = t.weight {
                    if !w.is_finite() {
                        return Err(format!("term weight {w} is not finite"));
                    }
                }
                parts.push((t.clone(), neg, mask));
            }
            let pos = pos.clone();
            Box::new(move |w| {
                let rules = parts
                    .iter()
                    .map(|(t, neg, mask)| {
                        let mut term = GuidanceTerm::new(neg.clone(), t.weight.unwrap_or(w));
                        if let Some(mask) = mask {
                            term = term.with_mask(mask.clone());
                        }
                        Ok((GuidanceRule::new(pos.clone()).with_term(term)?, t.alpha))
                    })
                    .collect::<swgtoy_core::Result<Vec<_>>>()
                    .map_err(|e| e.to_string())?;
                swgtoy_core::interpolate_rules(&rules).map_err(|e| e.to_string())
            })
        }
    };

    let mask: Option<Vec<bool>> = match &m.mask {
        None => masked
            .then(|| plan.as_ref().map(|p| p.overlap().flat_mask()))
            .flatten(),
        Some(MaskSpec::Bits(bits)) => {
            if let Some(b) = bits.iter().find(|&&b| b > 1) {
                return Err(format!("mask bits must be 0 or 1, got {b}"));
            }
            if bits.len() != dataset.dim() {
                return Err(format!(
                    "mask has {} bits but the data has {} dimensions",
                    bits.len(),
                    dataset.dim()
                ));
            }
            Some(bits.iter().map(|&b| b == 1).collect())
        }
        Some(MaskSpec::Source(s)) if s == "swg-overlap" => {
            let p = match &plan {
                Some(p) => p.clone(),
                None => plan_for(grid, m.k, m.l, m.windows)?,
            };
            if p.overlap().is_mask_empty() {
                warnings.push(empty_mask_warning(&p));
            }
            Some(p.overlap().flat_mask())
        }
        Some(MaskSpec::Source(s)) => return Err(format!("unknown mask source '{s}'")),
    };

    let interval = match m.interval {
        None => None,
        Some([lo, hi]) => {
            let origin = match m.interval_origin {
                OriginConfig::HighNoise => IntervalOrigin::HighNoise,
                OriginConfig::LowNoise => IntervalOrigin::LowNoise,
            };
            Some(
                StepInterval::from_origin(lo, hi, origin, schedule.n_steps)
                    .map_err(|e| e.to_string())?,
            )
        }
    };

    let labels: Vec<WeightLabel> = if m.kind == MethodKind::OptimalWmg {
        vec![WeightLabel::Optimal]
    } else {
        weights.iter().map(|&w| WeightLabel::Value(w)).collect()
    };
    let mut cells = Vec::with_capacity(labels.len());
    for label in labels {
        let w = match label {
            WeightLabel::Value(w) => w,
            WeightLabel::Optimal => 0.0,
        };
        let mut rule = base_rule(w)?;
        if let Some(mask) = &mask {
            rule = rule.with_mask(mask.clone()).map_err(|e| e.to_string())?;
        }
        if let Some(iv) = interval {
            rule = rule.with_interval(iv);
        }
        cells.push((label, rule));
    }
    for w in &warnings {
        tracing::warn!(method = %name, "{w}");
    }
    Ok(ResolvedMethod {
        name,
        kind: m.kind,
        cells,
        policy,
        oracle,
        plan,
        masked,
        warnings,
    })
}
