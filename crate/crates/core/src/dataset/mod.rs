//! Scenario sampling, capture simulation and labelled dataset generation.
//!
//! Every capture is a pure function of `(config, scenario, index)`: its seed
//! is derived from the master seed, the scenario tag and the index, and the
//! RIS pipeline does not enter the seed, so Off and Optimized corpora share
//! waveforms, channels and noise capture for capture.

mod export;
mod generate;

use std::io;

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    apply_channel, optimize_ris_greedy_with, sample_channel, ChannelError, ChannelModelParams,
    ChannelRealization, GreedyOptions, Hypothesis, OptimizationTrace, RisConfig,
};
use crate::seed;
use crate::spectrogram::{
    map_box, stft, to_image, CaptureGeometry, PixelBox, SpectrogramError, SpectrogramMatrix,
    StftParams, IMAGE_SIZE,
};
use crate::waveform::{
    combine, derive_numerology, synthesize, unoccupied_boxes, BoxClass, GroundTruthBox, IqFrame,
    SignalKind, Synthesis, WaveformError, WaveformSpec, DEFAULT_CP_RATIO, LTE_OCCUPANCY,
    LTE_SCS_HZ, NR_OCCUPANCY,
};

pub use export::{
    coco_document, export_coco, export_yolo, import_coco, import_yolo, yolo_line, CocoDocument,
    LabelRecord,
};
pub use generate::{
    generate_dataset, generate_dataset_with, ground_truth, CaptureRecord, DatasetManifest,
    GenerationOptions, LabeledBox, ManifestHeader, AXIS_CONVENTION, MANIFEST_FILE,
    MANIFEST_SCHEMA_VERSION,
};

/// Stored pixel coordinates are rounded to multiples of `1/PIXEL_QUANTUM`.
/// Dyadic values keep `[x, y, w, h]` conversions exact.
pub const PIXEL_QUANTUM: f64 = 1024.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("no disjoint placement found for {scenario:?} capture {index} after {attempts} attempts")]
    InfeasiblePlacement {
        scenario: Scenario,
        index: usize,
        attempts: usize,
    },
    #[error("index {index} out of range for {total} captures")]
    IndexOutOfRange { index: usize, total: usize },
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Spectrogram(#[from] SpectrogramError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed label file {path}: {reason}")]
    Label { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    LteOnly,
    NrOnly,
    Both,
    /// Noise only (primary transmitter idle).
    Idle,
}

impl Scenario {
    /// Scenarios with at least one active transmitter.
    pub const OCCUPIED: [Scenario; 3] = [Scenario::LteOnly, Scenario::NrOnly, Scenario::Both];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::LteOnly => "lte_only",
            Scenario::NrOnly => "nr_only",
            Scenario::Both => "both",
            Scenario::Idle => "idle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// How the received frame is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RisPipeline {
    /// Cascaded channel, all elements at 0°.
    #[default]
    Off,
    /// Cascaded channel, phases greedily optimized per capture.
    Optimized,
    /// No channel: unit gain, no Doppler, AWGN at the target SNR.
    Ideal,
}

impl RisPipeline {
    pub fn name(self) -> &'static str {
        match self {
            RisPipeline::Off => "off",
            RisPipeline::Optimized => "optimized",
            RisPipeline::Ideal => "ideal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenarios: Vec<Scenario>,
    pub lte_bandwidths_mhz: Vec<f64>,
    pub nr_bandwidths_mhz: Vec<f64>,
    pub nr_scs_khz: Vec<f64>,
    pub snr_grid_db: Vec<f64>,
    pub doppler_grid_hz: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub capture_rate_hz: f64,
    pub capture_duration_s: f64,
    pub master_seed: u64,
    /// Minimum spectral gap between the LTE and NR bands of a two-signal
    /// capture.
    pub placement_guard_hz: f64,
    pub max_placement_retries: usize,
    /// Center offsets are multiples of this.
    pub offset_quantum_hz: f64,
    /// Give every signal a random active interval instead of the whole
    /// capture.
    pub random_time_spans: bool,
    /// Active intervals start and stop on multiples of this.
    pub time_quantum_s: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenarios: Scenario::OCCUPIED.to_vec(),
            lte_bandwidths_mhz: vec![5.0, 10.0, 15.0, 20.0],
            nr_bandwidths_mhz: vec![10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0],
            nr_scs_khz: vec![15.0, 30.0],
            snr_grid_db: vec![0.0, 20.0, 50.0],
            doppler_grid_hz: vec![0.0, 10.0, 500.0],
            n_train: 900,
            n_test: 300,
            capture_rate_hz: 60e6,
            capture_duration_s: 0.040,
            master_seed: 0,
            placement_guard_hz: 1e6,
            max_placement_retries: 64,
            offset_quantum_hz: 1e3,
            random_time_spans: false,
            time_quantum_s: 1e-3,
        }
    }
}

impl ScenarioConfig {
    pub fn captures_per_scenario(&self) -> usize {
        self.n_train + self.n_test
    }

    pub fn split_of(&self, index: usize) -> Split {
        if index < self.n_train {
            Split::Train
        } else {
            Split::Test
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.capture_rate_hz * self.capture_duration_s).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DatasetError::InvalidConfig(msg));
        if self.scenarios.is_empty() {
            return bad("no scenarios".into());
        }
        let mut unique = self.scenarios.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != self.scenarios.len() {
            return bad("duplicate scenarios".into());
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive".into());
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.capture_rate_hz) || !positive(self.capture_duration_s) {
            return bad("capture rate and duration must be positive".into());
        }
        let needs = |s: Scenario| self.scenarios.contains(&s) || (s != Scenario::Both && self.scenarios.contains(&Scenario::Both));
        let grids: [(&str, &Vec<f64>, bool); 5] = [
            ("lte_bandwidths_mhz", &self.lte_bandwidths_mhz, needs(Scenario::LteOnly)),
            ("nr_bandwidths_mhz", &self.nr_bandwidths_mhz, needs(Scenario::NrOnly)),
            ("nr_scs_khz", &self.nr_scs_khz, needs(Scenario::NrOnly)),
            ("snr_grid_db", &self.snr_grid_db, true),
            ("doppler_grid_hz", &self.doppler_grid_hz, true),
        ];
        for (name, grid, required) in grids {
            if required && grid.is_empty() {
                return bad(format!("{name} is empty"));
            }
            if grid.iter().any(|v| !v.is_finite()) {
                return bad(format!("{name} contains a non-finite value"));
            }
        }
        for (name, grid) in [
            ("lte_bandwidths_mhz", &self.lte_bandwidths_mhz),
            ("nr_bandwidths_mhz", &self.nr_bandwidths_mhz),
            ("nr_scs_khz", &self.nr_scs_khz),
        ] {
            if grid.iter().any(|v| *v <= 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.doppler_grid_hz.iter().any(|v| *v < 0.0) {
            return bad("doppler_grid_hz must be non-negative".into());
        }
        if !(self.placement_guard_hz >= 0.0 && self.placement_guard_hz.is_finite()) {
            return bad("placement_guard_hz must be non-negative".into());
        }
        if !positive(self.offset_quantum_hz) {
            return bad("offset_quantum_hz must be positive".into());
        }
        if self.max_placement_retries == 0 {
            return bad("max_placement_retries must be positive".into());
        }
        if self.random_time_spans && !positive(self.time_quantum_s) {
            return bad("time_quantum_s must be positive".into());
        }
        for spec in self.candidate_specs() {
            derive_numerology(&spec, self.capture_rate_hz)?;
            if spec.bandwidth_hz > self.capture_rate_hz {
                return bad(format!(
                    "{:?} {} MHz does not fit a {} MHz capture",
                    spec.kind,
                    spec.bandwidth_hz / 1e6,
                    self.capture_rate_hz / 1e6
                ));
            }
        }
        Ok(())
    }

    fn candidate_specs(&self) -> Vec<WaveformSpec> {
        let mut specs: Vec<WaveformSpec> = self
            .lte_bandwidths_mhz
            .iter()
            .map(|bw| WaveformSpec::lte(bw * 1e6))
            .collect();
        for bw in &self.nr_bandwidths_mhz {
            for scs in &self.nr_scs_khz {
                specs.push(WaveformSpec::nr(bw * 1e6, scs * 1e3));
            }
        }
        specs
    }
}

/// One transmitted signal of a capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    pub kind: SignalKind,
    pub bandwidth_hz: f64,
    pub scs_hz: f64,
    pub center_offset_hz: f64,
    pub payload_seed: u64,
    /// Active interval; `None` is the whole capture.
    pub time_span: Option<(f64, f64)>,
}

impl SignalParams {
    pub fn spec(&self) -> WaveformSpec {
        let (occupancy_ratio, kind) = match self.kind {
            SignalKind::Lte => (LTE_OCCUPANCY, SignalKind::Lte),
            SignalKind::Nr => (NR_OCCUPANCY, SignalKind::Nr),
        };
        WaveformSpec {
            kind,
            bandwidth_hz: self.bandwidth_hz,
            scs_hz: self.scs_hz,
            center_offset_hz: self.center_offset_hz,
            occupancy_ratio,
            cp_ratio: DEFAULT_CP_RATIO,
            time_span: self.time_span,
            payload_seed: self.payload_seed,
        }
    }
}

/// Fully bound parameters of one capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureParams {
    pub scenario: Scenario,
    pub split: Split,
    pub index: usize,
    pub seed: u64,
    pub snr_db: f64,
    pub doppler_hz: f64,
    pub signals: Vec<SignalParams>,
}

pub fn capture_seed(master_seed: u64, scenario: Scenario, index: usize) -> u64 {
    seed::derive(master_seed, &[seed::tag(scenario.name()), index as u64])
}

fn pick<R: Rng>(rng: &mut R, grid: &[f64]) -> f64 {
    grid[rng.random_range(0..grid.len())]
}

/// Uniform multiple of `quantum` in `[lo, hi]`, or `None` if there is none.
fn quantized_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64, quantum: f64) -> Option<f64> {
    let (k0, k1) = ((lo / quantum).ceil() as i64, (hi / quantum).floor() as i64);
    (k0 <= k1).then(|| rng.random_range(k0..=k1) as f64 * quantum)
}

/// Deterministically samples the parameters of capture `index` of `scenario`.
pub fn sample_scenario(cfg: &ScenarioConfig, scenario: Scenario, index: usize) -> Result<CaptureParams> {
    let total = cfg.captures_per_scenario();
    if index >= total {
        return Err(DatasetError::IndexOutOfRange { index, total });
    }
    let capture = capture_seed(cfg.master_seed, scenario, index);
    let mut rng = seed::rng(seed::derive(capture, &[seed::tag("params")]));
    let snr_db = pick(&mut rng, &cfg.snr_grid_db);
    let doppler_hz = pick(&mut rng, &cfg.doppler_grid_hz);
    let rate = cfg.capture_rate_hz;
    let half_rate = rate / 2.0;
    let q = cfg.offset_quantum_hz;
    let payload = |i: u64| seed::derive(capture, &[seed::tag("payload"), i]);

    let lte = |rng: &mut rand_chacha::ChaCha8Rng| SignalParams {
        kind: SignalKind::Lte,
        bandwidth_hz: pick(rng, &cfg.lte_bandwidths_mhz) * 1e6,
        scs_hz: LTE_SCS_HZ,
        center_offset_hz: 0.0,
        payload_seed: payload(0),
        time_span: None,
    };
    let nr = |rng: &mut rand_chacha::ChaCha8Rng| SignalParams {
        kind: SignalKind::Nr,
        bandwidth_hz: pick(rng, &cfg.nr_bandwidths_mhz) * 1e6,
        scs_hz: pick(rng, &cfg.nr_scs_khz) * 1e3,
        center_offset_hz: 0.0,
        payload_seed: payload(1),
        time_span: None,
    };

    let signals = match scenario {
        Scenario::Idle => Vec::new(),
        Scenario::LteOnly | Scenario::NrOnly => {
            let mut s = if scenario == Scenario::LteOnly { lte(&mut rng) } else { nr(&mut rng) };
            let half = s.bandwidth_hz / 2.0;
            s.center_offset_hz = quantized_uniform(&mut rng, -(half_rate - half), half_rate - half, q)
                .ok_or(DatasetError::InfeasiblePlacement {
                    scenario,
                    index,
                    attempts: 1,
                })?;
            vec![s]
        }
        Scenario::Both => {
            let mut placed = None;
            for _ in 0..cfg.max_placement_retries {
                let (mut a, mut b) = (lte(&mut rng), nr(&mut rng));
                if rng.random_bool(0.5) {
                    std::mem::swap(&mut a, &mut b);
                }
                // `a` sits below `b`.
                let (ha, hb) = (a.bandwidth_hz / 2.0, b.bandwidth_hz / 2.0);
                let slack = rate - 2.0 * ha - 2.0 * hb - cfg.placement_guard_hz;
                if slack < 0.0 {
                    continue;
                }
                let mut cuts = [rng.random_range(0.0..=slack), rng.random_range(0.0..=slack)];
                cuts.sort_by(f64::total_cmp);
                let ca = ((-half_rate + cuts[0] + ha) / q).round() * q;
                let cb = ((ca + ha + cfg.placement_guard_hz + (cuts[1] - cuts[0]) + hb) / q).round() * q;
                let fits = ca - ha >= -half_rate
                    && cb + hb <= half_rate
                    && (cb - hb) - (ca + ha) >= cfg.placement_guard_hz;
                if fits {
                    a.center_offset_hz = ca;
                    b.center_offset_hz = cb;
                    let mut pair = vec![a, b];
                    pair.sort_by_key(|s| s.kind == SignalKind::Nr);
                    placed = Some(pair);
                    break;
                }
            }
            placed.ok_or(DatasetError::InfeasiblePlacement {
                scenario,
                index,
                attempts: cfg.max_placement_retries,
            })?
        }
    };

    let mut signals = signals;
    if cfg.random_time_spans {
        let slots = (cfg.capture_duration_s / cfg.time_quantum_s + 1e-9).floor() as usize;
        if slots >= 1 {
            for s in &mut signals {
                let start = rng.random_range(0..slots);
                let len = rng.random_range(1..=slots - start);
                let stop = ((start + len) as f64 * cfg.time_quantum_s).min(cfg.capture_duration_s);
                s.time_span = Some((start as f64 * cfg.time_quantum_s, stop));
            }
        }
    }

    Ok(CaptureParams {
        scenario,
        split: cfg.split_of(index),
        index,
        seed: capture,
        snr_db,
        doppler_hz,
        signals,
    })
}

/// Everything besides the scenario grids that shapes a capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulator {
    pub scenario: ScenarioConfig,
    pub stft: StftParams,
    pub db_range: (f64, f64),
    pub channel: ChannelModelParams,
    pub greedy: GreedyOptions,
    pub pipeline: RisPipeline,
}

impl Default for Simulator {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            stft: StftParams::default(),
            db_range: (-110.0, -10.0),
            channel: ChannelModelParams::default(),
            greedy: GreedyOptions::default(),
            pipeline: RisPipeline::Off,
        }
    }
}

/// A simulated capture held in memory.
#[derive(Debug, Clone)]
pub struct CaptureData {
    pub params: CaptureParams,
    /// Received frame, scaled so the RIS-off signal component has unit mean
    /// power.
    pub received: IqFrame,
    pub spectrogram: SpectrogramMatrix,
    pub image: RgbImage,
    /// Signal boxes followed by the unoccupied complement.
    pub boxes: Vec<GroundTruthBox>,
    pub pixel_boxes: Vec<PixelBox>,
    /// Received signal power gain of the applied RIS state over RIS off.
    pub ris_gain_db: f64,
    pub trace: Option<OptimizationTrace>,
}

/// Rounds to the storage quantum.
pub fn quantize_px(v: f64) -> f64 {
    (v * PIXEL_QUANTUM).round() / PIXEL_QUANTUM
}

pub fn quantize_box(b: &PixelBox) -> PixelBox {
    PixelBox::new(quantize_px(b.x0), quantize_px(b.y0), quantize_px(b.x1), quantize_px(b.y1))
}

impl Simulator {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.stft.validate()?;
        self.channel.validate()?;
        if !(self.db_range.0 < self.db_range.1 && self.db_range.0.is_finite() && self.db_range.1.is_finite()) {
            return Err(DatasetError::InvalidConfig(format!(
                "db_range {:?} is degenerate",
                self.db_range
            )));
        }
        if self.scenario.n_samples() < self.stft.window_len {
            return Err(DatasetError::InvalidConfig(format!(
                "a capture of {} samples is shorter than the {}-sample window",
                self.scenario.n_samples(),
                self.stft.window_len
            )));
        }
        Ok(())
    }

    pub fn geometry(&self) -> CaptureGeometry {
        CaptureGeometry {
            t0_s: 0.0,
            duration_s: self.scenario.n_samples() as f64 / self.scenario.capture_rate_hz,
            sample_rate_hz: self.scenario.capture_rate_hz,
        }
    }

    /// Transmitted frame and its ground truth.
    pub fn transmit(&self, params: &CaptureParams) -> Result<Synthesis> {
        let cfg = &self.scenario;
        if params.signals.is_empty() {
            return Ok(Synthesis {
                frame: IqFrame::zeros(cfg.n_samples(), cfg.capture_rate_hz),
                boxes: Vec::new(),
            });
        }
        let parts = params
            .signals
            .iter()
            .map(|s| synthesize(&s.spec(), cfg.capture_rate_hz, cfg.capture_duration_s, params.seed))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(combine(&parts)?)
    }

    /// Channel realization and RIS state for `params` under this pipeline.
    pub fn channel_for(&self, params: &CaptureParams) -> Result<(ChannelRealization, RisConfig, Option<OptimizationTrace>)> {
        if self.pipeline == RisPipeline::Ideal {
            return Ok((ChannelRealization::identity(), RisConfig::off(0), None));
        }
        let ch = sample_channel(&ChannelModelParams {
            seed: seed::derive(params.seed, &[seed::tag("channel")]),
            ..self.channel.clone()
        })?;
        let off = RisConfig::off(ch.n_elements());
        if self.pipeline == RisPipeline::Off {
            return Ok((ch, off, None));
        }
        let (ris, trace) = optimize_ris_greedy_with(&ch, &off, &self.greedy)?;
        Ok((ch, ris, Some(trace)))
    }

    pub fn simulate(&self, params: &CaptureParams) -> Result<CaptureData> {
        let tx = self.transmit(params)?;
        let (ch, ris, trace) = self.channel_for(params)?;
        let doppler = if self.pipeline == RisPipeline::Ideal { 0.0 } else { params.doppler_hz };
        let hypothesis = if params.signals.is_empty() { Hypothesis::H0 } else { Hypothesis::H1 };
        let rx = apply_channel(
            &tx.frame,
            &ch,
            &ris,
            hypothesis,
            params.snr_db,
            doppler,
            seed::derive(params.seed, &[seed::tag("propagation")]),
        )?;
        // Fixed receiver gain: the RIS-off signal reference maps to unit power.
        let reference = rx.noise_variance * 10f64.powf(params.snr_db / 10.0);
        let scale = 1.0 / reference.sqrt();
        let mut received = rx.frame;
        for s in &mut received.samples {
            *s *= scale;
        }
        let off_gain = crate::channel::effective_gain(&ch, &RisConfig::off(ch.n_elements()).with_alpha(ris.alpha))?;
        let ris_gain_db = if off_gain.norm_sqr() > 0.0 {
            10.0 * (rx.gain.norm_sqr() / off_gain.norm_sqr()).log10()
        } else {
            0.0
        };

        let spectrogram = stft(&received, &self.stft)?;
        let image = to_image(&spectrogram, IMAGE_SIZE, self.db_range)?;
        let geometry = self.geometry();
        let mut boxes = tx.boxes;
        boxes.extend(unoccupied_boxes(
            &boxes,
            geometry.sample_rate_hz,
            geometry.duration_s,
            geometry.sample_rate_hz / IMAGE_SIZE as f64,
        ));
        let pixel_boxes = boxes
            .iter()
            .map(|b| quantize_box(&map_box(b, &geometry, IMAGE_SIZE)))
            .collect();
        Ok(CaptureData {
            params: params.clone(),
            received,
            spectrogram,
            image,
            boxes,
            pixel_boxes,
            ris_gain_db,
            trace,
        })
    }

    pub fn capture_id(&self, scenario: Scenario, split: Split, index: usize) -> String {
        format!(
            "{}-{}-{}-{:05}",
            self.pipeline.name(),
            scenario.name(),
            split.name(),
            index
        )
    }
}

/// True when the two boxes share frequency content.
pub fn frequency_overlap(a: &GroundTruthBox, b: &GroundTruthBox) -> bool {
    a.f0_hz < b.f1_hz && b.f0_hz < a.f1_hz
}

/// Signal (non-unoccupied) boxes.
pub fn signal_boxes(boxes: &[GroundTruthBox]) -> impl Iterator<Item = &GroundTruthBox> {
    boxes.iter().filter(|b| b.class != BoxClass::Unoccupied)
}
