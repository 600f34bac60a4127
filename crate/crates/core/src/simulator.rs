//! Analytic B-scan synthesis.
//!
//! Target responses are Ricker wavelets laid along the diffraction hyperbola
//! `t(x) = 2·sqrt(depth² + (x − x0)²) / v` with `v = c0 / sqrt(εr)`. Clutter
//! is a surface band (direct wave plus ground reflection, jittered by a rough
//! surface height profile) and an optional band-limited heterogeneity field.
//! A scan pair is `(clutter + response, response)`.
//!
//! Every generator is a pure function of its scene description and seed.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::radargram::{Dataset, DatasetPair, Provenance, Radargram, WORKING_HEIGHT, WORKING_WIDTH};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Slant range at which a reflector's amplitude equals its reflectivity.
const REFERENCE_RANGE: f64 = 0.05;
/// Grid onto which synthesized amplitudes are snapped. Sums of values on this
/// grid are exact in binary64, so `raw − clutter_free` recovers the clutter
/// field bit for bit.
const AMPLITUDE_QUANTUM: f64 = 1.0 / (1u64 << 32) as f64;

const DIRECT_WAVE_AMPLITUDE: f64 = 0.6;
const SURFACE_AMPLITUDE: f64 = 1.0;
const ANTENNA_HEIGHT: f64 = 0.05;

pub fn ricker(tau: f64, center_freq: f64) -> f64 {
    let a = (PI * center_freq * tau).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

fn quantize(v: f64) -> f64 {
    (v / AMPLITUDE_QUANTUM).round() * AMPLITUDE_QUANTUM
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Material {
    /// Perfect electric conductor.
    Pec,
    Pvc,
}

impl Material {
    pub const PVC_PERMITTIVITY: f64 = 3.5;

    /// Normal-incidence reflection coefficient from soil into the target.
    pub fn reflectivity(self, soil_permittivity: f64) -> f64 {
        match self {
            Material::Pec => -1.0,
            Material::Pvc => {
                let (a, b) = (soil_permittivity.sqrt(), Self::PVC_PERMITTIVITY.sqrt());
                (a - b) / (a + b)
            }
        }
    }
}

impl FromStr for Material {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pec" => Ok(Material::Pec),
            "pvc" => Ok(Material::Pvc),
            _ => Err(Error::invalid(format!("unknown material {s:?} (pec|pvc)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSpec {
    /// Horizontal apex position, metres from the first trace.
    pub x0: f64,
    /// Cover depth, metres.
    pub depth: f64,
    pub radius: f64,
    pub reflectivity: f64,
    pub wave_speed: f64,
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth > 0.0 && self.depth.is_finite()) {
            return Err(Error::invalid(format!("target depth must be positive, got {}", self.depth)));
        }
        if !(self.reflectivity.abs() <= 1.0) {
            return Err(Error::invalid(format!("|reflectivity| must be <= 1, got {}", self.reflectivity)));
        }
        if !(self.wave_speed > 0.0 && self.wave_speed.is_finite()) {
            return Err(Error::invalid(format!("wave speed must be positive, got {}", self.wave_speed)));
        }
        if !(self.radius >= 0.0 && self.x0.is_finite()) {
            return Err(Error::invalid("target radius must be non-negative and x0 finite"));
        }
        Ok(())
    }

    pub fn slant_range(&self, x: f64) -> f64 {
        self.depth.hypot(x - self.x0)
    }

    /// Two-way travel time from the surface to the reflector and back.
    pub fn two_way_time(&self, x: f64) -> f64 {
        self.two_way_time_at_offset(x - self.x0)
    }

    /// Two-way time at horizontal offset `dx` from the apex; even in `dx`.
    pub fn two_way_time_at_offset(&self, dx: f64) -> f64 {
        2.0 * self.depth.hypot(dx) / self.wave_speed
    }

    pub fn apex_time(&self) -> f64 {
        2.0 * self.depth / self.wave_speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    Flat,
    Rough,
    Grass,
    RoughWater,
}

impl SurfaceKind {
    pub const ALL: [SurfaceKind; 4] = [
        SurfaceKind::Flat,
        SurfaceKind::Rough,
        SurfaceKind::Grass,
        SurfaceKind::RoughWater,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SurfaceKind::Flat => "flat",
            SurfaceKind::Rough => "rough",
            SurfaceKind::Grass => "grass",
            SurfaceKind::RoughWater => "rough_water",
        }
    }

    /// Height-profile correlation length in traces. Grass is modelled as a
    /// rough surface with a short correlation length.
    fn correlation_traces(self) -> f64 {
        match self {
            SurfaceKind::Flat => 0.0,
            SurfaceKind::Rough | SurfaceKind::RoughWater => 6.0,
            SurfaceKind::Grass => 1.5,
        }
    }
}

impl FromStr for SurfaceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SurfaceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown surface {s:?} (flat|rough|grass|rough_water)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSpec {
    pub kind: SurfaceKind,
    /// Peak-to-peak height fluctuation, metres.
    pub roughness_amp: f64,
    pub seed: u64,
}

impl SurfaceSpec {
    pub fn flat() -> Self {
        SurfaceSpec {
            kind: SurfaceKind::Flat,
            roughness_amp: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.roughness_amp >= 0.0 && self.roughness_amp.is_finite()) {
            return Err(Error::invalid(format!("roughness must be >= 0, got {}", self.roughness_amp)));
        }
        if self.kind == SurfaceKind::Flat && self.roughness_amp != 0.0 {
            return Err(Error::invalid("flat surface must have zero roughness"));
        }
        Ok(())
    }

    /// Surface height per trace, metres; peak-to-peak at most `roughness_amp`.
    pub fn height_profile(&self, traces: usize) -> Vec<f64> {
        if self.kind == SurfaceKind::Flat || self.roughness_amp == 0.0 {
            return vec![0.0; traces];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise: Vec<f64> = (0..traces).map(|_| rng.sample(StandardNormal)).collect();
        let smooth = gaussian_smooth_1d(&noise, self.kind.correlation_traces());
        let mean = smooth.iter().sum::<f64>() / traces as f64;
        let peak = smooth.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        if peak == 0.0 {
            return vec![0.0; traces];
        }
        let scale = 0.5 * self.roughness_amp / peak;
        smooth.iter().map(|v| (v - mean) * scale).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoilKind {
    DrySand,
    DampSand,
    DryClay,
    WetClay,
    DryLoam,
    Heterogeneous,
}

impl SoilKind {
    pub const ALL: [SoilKind; 6] = [
        SoilKind::DrySand,
        SoilKind::DampSand,
        SoilKind::DryClay,
        SoilKind::WetClay,
        SoilKind::DryLoam,
        SoilKind::Heterogeneous,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SoilKind::DrySand => "dry_sand",
            SoilKind::DampSand => "damp_sand",
            SoilKind::DryClay => "dry_clay",
            SoilKind::WetClay => "wet_clay",
            SoilKind::DryLoam => "dry_loam",
            SoilKind::Heterogeneous => "heterogeneous",
        }
    }

    pub fn spec(self) -> SoilSpec {
        let (relative_permittivity, heterogeneity_level) = match self {
            SoilKind::DrySand => (3.0, 0.0),
            SoilKind::DampSand => (8.0, 0.0),
            SoilKind::DryClay => (10.0, 0.0),
            SoilKind::WetClay => (12.0, 0.0),
            SoilKind::DryLoam => (10.0, 0.0),
            SoilKind::Heterogeneous => (6.0, 0.15),
        };
        SoilSpec {
            relative_permittivity,
            heterogeneity_level,
            correlation_length: 3.0,
        }
    }
}

impl FromStr for SoilKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SoilKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown soil {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoilSpec {
    pub relative_permittivity: f64,
    pub heterogeneity_level: f64,
    /// Horizontal correlation length of the heterogeneity field, traces.
    pub correlation_length: f64,
}

impl SoilSpec {
    pub fn homogeneous(relative_permittivity: f64) -> Self {
        SoilSpec {
            relative_permittivity,
            heterogeneity_level: 0.0,
            correlation_length: 3.0,
        }
    }

    pub fn wave_speed(&self) -> f64 {
        SPEED_OF_LIGHT / self.relative_permittivity.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relative_permittivity >= 1.0) {
            return Err(Error::invalid(format!(
                "relative permittivity must be >= 1, got {}",
                self.relative_permittivity
            )));
        }
        if !(self.heterogeneity_level >= 0.0 && self.correlation_length >= 0.0) {
            return Err(Error::invalid("heterogeneity level and correlation length must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub targets: Vec<TargetSpec>,
    pub surface: SurfaceSpec,
    pub soil: SoilSpec,
    pub height: usize,
    pub width: usize,
    pub trace_spacing: f64,
    /// Total recording time covered by the rows, seconds.
    pub time_window: f64,
    /// Recording time of the ground surface reflection; subsurface travel
    /// times are measured from here.
    pub time_zero: f64,
    pub wavelet_center_freq: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Scene without targets over a flat dry-sand half-space, 256×64 traces at
    /// 1 cm spacing, 8 ns window and a 1.5 GHz wavelet.
    pub fn new(height: usize, width: usize) -> Self {
        SceneSpec {
            targets: Vec::new(),
            surface: SurfaceSpec::flat(),
            soil: SoilKind::DrySand.spec(),
            height,
            width,
            trace_spacing: 0.01,
            time_window: 8e-9,
            time_zero: 1e-9,
            wavelet_center_freq: 1.5e9,
            seed: 0,
        }
    }

    pub fn sample_interval(&self) -> f64 {
        self.time_window / self.height as f64
    }

    pub fn trace_position(&self, column: usize) -> f64 {
        column as f64 * self.trace_spacing
    }

    pub fn center_x(&self) -> f64 {
        self.trace_position(self.width - 1) * 0.5
    }

    /// Fractional row at which a two-way subsurface time is recorded.
    pub fn time_to_row(&self, t: f64) -> f64 {
        (t + self.time_zero) / self.sample_interval()
    }

    pub fn row_time(&self, row: usize) -> f64 {
        row as f64 * self.sample_interval() - self.time_zero
    }

    pub fn apex_row(&self, target: &TargetSpec) -> usize {
        self.time_to_row(target.apex_time()).round() as usize
    }

    /// Target of the given material at the soil's wave speed.
    pub fn target(&self, x0: f64, depth: f64, radius: f64, material: Material) -> TargetSpec {
        TargetSpec {
            x0,
            depth,
            radius,
            reflectivity: material.reflectivity(self.soil.relative_permittivity),
            wave_speed: self.soil.wave_speed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("scene size must be non-zero"));
        }
        if self.targets.len() > 3 {
            return Err(Error::invalid(format!("at most 3 targets, got {}", self.targets.len())));
        }
        for (name, v) in [
            ("trace_spacing", self.trace_spacing),
            ("time_window", self.time_window),
            ("wavelet_center_freq", self.wavelet_center_freq),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.time_zero >= 0.0 && self.time_zero < self.time_window) {
            return Err(Error::invalid("time_zero must lie inside the time window"));
        }
        self.surface.validate()?;
        self.soil.validate()?;
        for t in &self.targets {
            t.validate()?;
        }
        for (i, a) in self.targets.iter().enumerate() {
            for b in &self.targets[i + 1..] {
                if (a.x0 - b.x0).abs() <= a.radius + b.radius {
                    return Err(Error::invalid(format!(
                        "targets at x0={} and x0={} overlap horizontally",
                        a.x0, b.x0
                    )));
                }
            }
        }
        Ok(())
    }

    fn label(&self, clipped: &[usize]) -> String {
        let mut label = format!(
            "surface={} eps={} targets={}",
            self.surface.kind.as_str(),
            self.soil.relative_permittivity,
            self.targets.len()
        );
        if !clipped.is_empty() {
            let _ = write!(label, " clipped={clipped:?}");
        }
        label
    }

    fn radargram(&self, data: Array2<f64>, clipped: &[usize]) -> Result<Radargram> {
        Radargram::new(data.mapv(quantize))?
            .with_trace_spacing(self.trace_spacing)?
            .with_time_window(Some(self.time_window))?
            .with_label(self.label(clipped))
    }

    /// One manifest line: `key=value` fields separated by spaces, targets as
    /// `x0:depth:radius:reflectivity` groups.
    pub fn manifest_line(&self) -> String {
        let targets: Vec<String> = self
            .targets
            .iter()
            .map(|t| format!("{:?}:{:?}:{:?}:{:?}", t.x0, t.depth, t.radius, t.reflectivity))
            .collect();
        format!(
            "seed={} surface={} roughness={:?} surface_seed={} permittivity={:?} heterogeneity={:?} \
             correlation={:?} n_targets={} targets={}",
            self.seed,
            self.surface.kind.as_str(),
            self.surface.roughness_amp,
            self.surface.seed,
            self.soil.relative_permittivity,
            self.soil.heterogeneity_level,
            self.soil.correlation_length,
            self.targets.len(),
            if targets.is_empty() { "-".to_string() } else { targets.join(",") }
        )
    }
}

/// Clutter-free response: Ricker wavelets along each target's hyperbola,
/// scaled by reflectivity and `1/sqrt(slant range)` spreading. Targets whose
/// apex falls beyond the window are dropped and listed in the label.
pub fn synth_target_response(scene: &SceneSpec) -> Result<Radargram> {
    scene.validate()?;
    let (h, w) = (scene.height, scene.width);
    let mut data = Array2::<f64>::zeros((h, w));
    let mut clipped = Vec::new();
    let dt = scene.sample_interval();
    let half_support = (3.0 / scene.wavelet_center_freq / dt).ceil() as isize;
    for (k, target) in scene.targets.iter().enumerate() {
        if target.apex_time() + scene.time_zero >= scene.time_window {
            clipped.push(k);
            continue;
        }
        for j in 0..w {
            let x = scene.trace_position(j);
            let arrival = target.two_way_time(x);
            let amp = target.reflectivity * (REFERENCE_RANGE / target.slant_range(x)).sqrt();
            let center = scene.time_to_row(arrival).round() as isize;
            let lo = (center - half_support).max(0);
            let hi = (center + half_support).min(h as isize - 1);
            for i in lo..=hi {
                let tau = scene.row_time(i as usize) - arrival;
                data[[i as usize, j]] += amp * ricker(tau, scene.wavelet_center_freq);
            }
        }
    }
    scene.radargram(data, &clipped)
}

/// Clutter-only field: the direct wave and ground reflection band, jittered
/// and amplitude-modulated by the surface height profile, plus a band-limited
/// heterogeneity field below the surface.
pub fn synth_clutter(scene: &SceneSpec) -> Result<Radargram> {
    scene.validate()?;
    let (h, w) = (scene.height, scene.width);
    let f = scene.wavelet_center_freq;
    let heights = scene.surface.height_profile(w);
    let (surface_gain, ring_gain) = match scene.surface.kind {
        SurfaceKind::RoughWater => (1.6, 0.8),
        _ => (1.0, 0.4),
    };
    let ring_decay = 1.5 / f;
    let direct_time = -2.0 * ANTENNA_HEIGHT / SPEED_OF_LIGHT;
    let amp_ref = scene.surface.roughness_amp.max(f64::MIN_POSITIVE);

    let mut data = Array2::<f64>::zeros((h, w));
    for j in 0..w {
        // A raised surface is closer to the antenna and reflects earlier.
        let shift = -2.0 * heights[j] / SPEED_OF_LIGHT;
        let amp = SURFACE_AMPLITUDE * surface_gain * (1.0 + 0.5 * heights[j] / amp_ref);
        for i in 0..h {
            let t = scene.row_time(i);
            let tau = t - shift;
            let mut v = DIRECT_WAVE_AMPLITUDE * ricker(t - direct_time, f) + amp * ricker(tau, f);
            if tau > 0.0 {
                v += amp * ring_gain * (-tau / ring_decay).exp() * (2.0 * PI * f * tau).sin();
            }
            data[[i, j]] = v;
        }
    }

    if scene.soil.heterogeneity_level > 0.0 {
        let field = heterogeneity_field(scene);
        data += &field;
    }
    scene.radargram(data, &[])
}

fn heterogeneity_field(scene: &SceneSpec) -> Array2<f64> {
    let (h, w) = (scene.height, scene.width);
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Array2::from_shape_fn((h, w), |_| rng.sample::<f64, _>(StandardNormal));

    // Band-limit each trace with the source wavelet.
    let dt = scene.sample_interval();
    let half = (2.0 / scene.wavelet_center_freq / dt).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|k| ricker(k as f64 * dt, scene.wavelet_center_freq))
        .collect();
    let mut field = Array2::<f64>::zeros((h, w));
    for j in 0..w {
        for i in 0..h as isize {
            let mut acc = 0.0;
            for (m, kv) in kernel.iter().enumerate() {
                let src = i + m as isize - half;
                if (0..h as isize).contains(&src) {
                    acc += kv * noise[[src as usize, j]];
                }
            }
            field[[i as usize, j]] = acc;
        }
    }
    for i in 0..h {
        let row: Vec<f64> = field.row(i).to_vec();
        let smooth = gaussian_smooth_1d(&row, scene.soil.correlation_length);
        field.row_mut(i).assign(&Array1::from(smooth));
    }
    let n = field.len() as f64;
    let mean = field.sum() / n;
    let std = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return Array2::zeros((h, w));
    }
    // Fade in just below the surface reflection.
    let onset = 1.0 / scene.wavelet_center_freq;
    let level = scene.soil.heterogeneity_level;
    Array2::from_shape_fn((h, w), |(i, j)| {
        let t = scene.row_time(i);
        let taper = 0.5 * (1.0 + ((t - onset) / (0.5 * onset)).tanh());
        level * taper * (field[[i, j]] - mean) / std
    })
}

/// Gaussian low-pass with reflected edges. `sigma <= 0` is the identity.
fn gaussian_smooth_1d(values: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || values.len() < 2 {
        return values.to_vec();
    }
    let n = values.len() as isize;
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (m, wv) in weights.iter().enumerate() {
                let mut src = i + m as isize - radius;
                // Reflect, repeating as needed for very short signals.
                while src < 0 || src >= n {
                    src = if src < 0 { -src - 1 } else { 2 * n - src - 1 };
                }
                acc += wv * values[src as usize];
            }
            acc / norm
        })
        .collect()
}

/// Raw scan = clutter + response; clutter-free scan = response.
pub fn synth_pair(scene: &SceneSpec) -> Result<DatasetPair> {
    let clean = synth_target_response(scene)?;
    let clutter = synth_clutter(scene)?;
    let raw = clean.with_data(&clutter.data() + &clean.data())?;
    DatasetPair::new(raw, clean, Provenance::Simulated)
}

/// Mixes a clutter-only scan with a clutter-free scan of the same shape:
/// `raw = normalize(mix·normalize(clutter) + normalize(clean))`.
pub fn hybridize(clutter_only: &Radargram, clutter_free: &Radargram, mix: f64) -> Result<DatasetPair> {
    if !(mix > 0.0 && mix <= 1.0) {
        return Err(Error::invalid(format!("mix must lie in (0, 1], got {mix}")));
    }
    if clutter_only.dim() != clutter_free.dim() {
        return Err(Error::invalid(format!(
            "clutter {:?} and clutter-free {:?} shapes differ",
            clutter_only.dim(),
            clutter_free.dim()
        )));
    }
    let clutter = clutter_only.normalize_unit();
    let clean = clutter_free.normalize_unit();
    let mixed = clean.with_data(clutter.data().mapv(|v| mix * v) + clean.data())?;
    DatasetPair::new(mixed.normalize_unit(), clean, Provenance::Hybrid)
}

/// [`hybridize`] after resizing both inputs to `height × width`.
pub fn hybridize_resized(
    clutter_only: &Radargram,
    clutter_free: &Radargram,
    mix: f64,
    height: usize,
    width: usize,
) -> Result<DatasetPair> {
    hybridize(
        &clutter_only.resize_bilinear(height, width)?,
        &clutter_free.resize_bilinear(height, width)?,
        mix,
    )
}

/// Distribution of scenes drawn by [`generate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    pub seed: u64,
    /// Native scene size before preparation.
    pub scene_height: usize,
    pub scene_width: usize,
    /// Size of the prepared (resized, normalised) pairs.
    pub height: usize,
    pub width: usize,
    pub trace_spacing: f64,
    pub time_window: f64,
    pub time_zero: f64,
    pub wavelet_center_freq: f64,
    pub surfaces: Vec<SurfaceKind>,
    pub soils: Vec<SoilKind>,
    pub target_counts: Vec<usize>,
    pub materials: Vec<Material>,
    pub roughness_amp: f64,
    /// Cover depth range, metres.
    pub depth_range: (f64, f64),
    pub radius_range: (f64, f64),
    /// Horizontal placement range as a fraction of the aperture.
    pub position_range: (f64, f64),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 80,
            seed: 0,
            scene_height: WORKING_HEIGHT,
            scene_width: WORKING_WIDTH,
            height: WORKING_HEIGHT,
            width: WORKING_WIDTH,
            trace_spacing: 0.01,
            time_window: 8e-9,
            time_zero: 1e-9,
            wavelet_center_freq: 1.5e9,
            surfaces: SurfaceKind::ALL.to_vec(),
            soils: SoilKind::ALL.to_vec(),
            target_counts: vec![1, 2, 3],
            materials: vec![Material::Pec, Material::Pvc],
            roughness_amp: 0.04,
            depth_range: (0.01, 0.10),
            radius_range: (0.01, 0.05),
            position_range: (0.2, 0.8),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("dataset count must be positive"));
        }
        if self.surfaces.is_empty() || self.soils.is_empty() || self.target_counts.is_empty() || self.materials.is_empty() {
            return Err(Error::invalid("surfaces, soils, target counts and materials must be non-empty"));
        }
        if self.target_counts.iter().any(|&n| n > 3) {
            return Err(Error::invalid("at most 3 targets per scene"));
        }
        for (name, (lo, hi)) in [
            ("depth", self.depth_range),
            ("radius", self.radius_range),
            ("position", self.position_range),
        ] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::invalid(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        if self.depth_range.0 <= 0.0 {
            return Err(Error::invalid("depths must be positive"));
        }
        if self.height == 0 || self.width == 0 || self.scene_height == 0 || self.scene_width == 0 {
            return Err(Error::invalid("sizes must be non-zero"));
        }
        Ok(())
    }

    /// Deterministic per-scene seed derived from the dataset seed.
    pub fn scene_seed(&self, index: usize) -> u64 {
        splitmix64(self.seed ^ splitmix64(index as u64 + 1))
    }

    pub fn scene(&self, index: usize) -> Result<SceneSpec> {
        let seed = self.scene_seed(index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let surface_kind = self.surfaces[rng.random_range(0..self.surfaces.len())];
        let soil = self.soils[rng.random_range(0..self.soils.len())].spec();
        let n_targets = self.target_counts[rng.random_range(0..self.target_counts.len())];

        let mut scene = SceneSpec::new(self.scene_height, self.scene_width);
        scene.seed = seed;
        scene.soil = soil;
        scene.trace_spacing = self.trace_spacing;
        scene.time_window = self.time_window;
        scene.time_zero = self.time_zero;
        scene.wavelet_center_freq = self.wavelet_center_freq;
        scene.surface = SurfaceSpec {
            kind: surface_kind,
            roughness_amp: if surface_kind == SurfaceKind::Flat { 0.0 } else { self.roughness_amp },
            seed: rng.random(),
        };

        let aperture = scene.trace_position(scene.width - 1);
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if hi > lo { rng.random_range(lo..=hi) } else { lo }
        };
        let mut attempts = 0;
        while scene.targets.len() < n_targets {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::invalid("cannot place non-overlapping targets; widen position range"));
            }
            let material = self.materials[rng.random_range(0..self.materials.len())];
            let x0 = aperture * uniform(&mut rng, self.position_range);
            let depth = uniform(&mut rng, self.depth_range);
            let radius = uniform(&mut rng, self.radius_range);
            let candidate = scene.target(x0, depth, radius, material);
            let clear = scene
                .targets
                .iter()
                .all(|t| (t.x0 - x0).abs() > t.radius + radius);
            if clear {
                scene.targets.push(candidate);
            }
        }
        Ok(scene)
    }

    pub fn scenes(&self) -> Result<Vec<SceneSpec>> {
        self.validate()?;
        (0..self.count).map(|i| self.scene(i)).collect()
    }

    /// `key=value` lines, readable by [`DatasetConfig::from_key_values`].
    pub fn to_key_values(&self) -> String {
        let join = |items: Vec<&str>| items.join(",");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("count", self.count.to_string());
        kv("seed", self.seed.to_string());
        kv("scene_size", format!("{}x{}", self.scene_height, self.scene_width));
        kv("size", format!("{}x{}", self.height, self.width));
        kv("trace_spacing", format!("{:?}", self.trace_spacing));
        kv("time_window", format!("{:?}", self.time_window));
        kv("time_zero", format!("{:?}", self.time_zero));
        kv("wavelet_center_freq", format!("{:?}", self.wavelet_center_freq));
        kv("surfaces", join(self.surfaces.iter().map(|s| s.as_str()).collect()));
        kv("soils", join(self.soils.iter().map(|s| s.as_str()).collect()));
        kv(
            "targets",
            self.target_counts.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
        );
        kv(
            "materials",
            join(
                self.materials
                    .iter()
                    .map(|m| match m {
                        Material::Pec => "pec",
                        Material::Pvc => "pvc",
                    })
                    .collect(),
            ),
        );
        kv("roughness", format!("{:?}", self.roughness_amp));
        kv("depth_range", format!("{:?}:{:?}", self.depth_range.0, self.depth_range.1));
        kv("radius_range", format!("{:?}:{:?}", self.radius_range.0, self.radius_range.1));
        kv("position_range", format!("{:?}:{:?}", self.position_range.0, self.position_range.1));
        out
    }

    /// Parses `key=value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped; unknown keys are errors.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = DatasetConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key=value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::invalid(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::invalid(format!("bad value {v:?} for {key}")))
        }
        fn list<T: FromStr<Err = Error>>(v: &str) -> Result<Vec<T>> {
            v.split(',').map(|s| s.trim().parse()).collect()
        }
        fn range(key: &str, v: &str) -> Result<(f64, f64)> {
            let (a, b) = v
                .split_once(':')
                .ok_or_else(|| Error::invalid(format!("{key} expects lo:hi")))?;
            Ok((num(key, a)?, num(key, b)?))
        }
        match key {
            "count" => self.count = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "scene_size" => (self.scene_height, self.scene_width) = parse_size(value)?,
            "size" => (self.height, self.width) = parse_size(value)?,
            "trace_spacing" => self.trace_spacing = num(key, value)?,
            "time_window" => self.time_window = num(key, value)?,
            "time_zero" => self.time_zero = num(key, value)?,
            "wavelet_center_freq" => self.wavelet_center_freq = num(key, value)?,
            "surfaces" => self.surfaces = list(value)?,
            "soils" => self.soils = list(value)?,
            "targets" => {
                self.target_counts = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "materials" => self.materials = list(value)?,
            "roughness" => self.roughness_amp = num(key, value)?,
            "depth_range" => self.depth_range = range(key, value)?,
            "radius_range" => self.radius_range = range(key, value)?,
            "position_range" => self.position_range = range(key, value)?,
            _ => return Err(Error::invalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }
}

/// Parses `HxW`.
pub fn parse_size(text: &str) -> Result<(usize, usize)> {
    let (h, w) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::invalid(format!("size {text:?} must look like 256x64")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::invalid(format!("size {text:?} must have positive dimensions")))
    };
    Ok((parse(h)?, parse(w)?))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Scenes drawn from `config`, rendered and prepared (resized to the working
/// size, normalised). Rendering fans out across the rayon pool; order and
/// content depend only on the config.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    let scenes = config.scenes()?;
    let pairs = scenes
        .par_iter()
        .map(|scene| synth_pair(scene)?.prepare(config.height, config.width))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(pairs, config.seed)
}
