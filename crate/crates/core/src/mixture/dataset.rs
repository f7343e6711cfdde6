use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mix::{mix, random_unit_fir, Mixed, MixingMode, NoiseInput};
use super::seed::mix64;
use super::synth::{disconnect_interval, synth_source, SourceKind, SourceSpec, SubjectProfile};
use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Relative levels used by the test partitions.
pub const TEST_DB_GRID: [f64; 5] = [-10.0, -5.0, 0.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }

    fn id_base(self) -> u32 {
        match self {
            Partition::Train => 1000,
            Partition::Val => 2000,
            Partition::Test => 3000,
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Partition::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown partition {s:?}")))
    }
}

/// Test-set noise condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseGroup {
    NoNoise,
    General,
    RespSupport,
}

impl NoiseGroup {
    pub const ALL: [NoiseGroup; 3] = [NoiseGroup::NoNoise, NoiseGroup::General, NoiseGroup::RespSupport];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseGroup::NoNoise => "no_noise",
            NoiseGroup::General => "general",
            NoiseGroup::RespSupport => "resp",
        }
    }

    pub fn kinds(self) -> &'static [SourceKind] {
        match self {
            NoiseGroup::NoNoise => &[],
            NoiseGroup::General => &[SourceKind::Cry, SourceKind::StethRub, SourceKind::StethDisconnect],
            NoiseGroup::RespSupport => &[SourceKind::CpapBubble, SourceKind::CpapVent],
        }
    }
}

impl fmt::Display for NoiseGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_noise" | "none" => Ok(NoiseGroup::NoNoise),
            "general" => Ok(NoiseGroup::General),
            "resp" | "resp_support" => Ok(NoiseGroup::RespSupport),
            _ => Err(Error::invalid(format!("unknown noise group {s:?}"))),
        }
    }
}

/// Everything needed to regenerate one mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDescriptor {
    pub index: u64,
    pub partition: Partition,
    pub group: NoiseGroup,
    pub subject_id: u32,
    pub duration_s: f64,
    pub heart_bpm: f64,
    pub heart_seed: u64,
    pub breath_bpm: f64,
    pub lung_seed: u64,
    pub noise_kind: Option<SourceKind>,
    pub noise_id: u32,
    pub noise_seed: u64,
    pub rel_db_lung: f64,
    pub rel_db_noise: f64,
    pub mode: MixingMode,
    pub fir_seed: u64,
    pub fir_min: usize,
    pub fir_max: usize,
    /// `(offset, len)` in samples.
    pub crop: Option<(usize, usize)>,
}

/// A rendered mixture with its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub mixture: Waveform,
    pub target_heart: Waveform,
    pub target_lung: Waveform,
    pub noise: Waveform,
    pub noise_kind: Option<SourceKind>,
    pub group: NoiseGroup,
    pub rel_db_lung: f64,
    pub rel_db_noise: f64,
    pub mixing: MixingMode,
    pub fir_filters: Option<[Vec<f64>; 3]>,
    pub subject_id: u32,
    pub partition: Partition,
    /// Disconnect interval within this sample, if any.
    pub silence: Option<std::ops::Range<usize>>,
}

impl SampleDescriptor {
    fn source_spec(&self, kind: SourceKind, subject: u32, seed: u64) -> SourceSpec {
        SourceSpec {
            kind,
            subject_id: subject,
            seed,
            duration_s: self.duration_s,
            heart_bpm: self.heart_bpm,
            breath_bpm: self.breath_bpm,
        }
    }

    pub fn firs(&self) -> Option<[Vec<f64>; 3]> {
        match self.mode {
            MixingMode::Additive => None,
            MixingMode::Convolutive => {
                let mut r = ChaCha8Rng::seed_from_u64(self.fir_seed);
                let range = self.fir_min..=self.fir_max;
                Some([
                    random_unit_fir(range.clone(), &mut r),
                    random_unit_fir(range.clone(), &mut r),
                    random_unit_fir(range, &mut r),
                ])
            }
        }
    }

    /// Synthesizes the sources and mixes them.
    pub fn render(&self) -> Result<MixtureSample> {
        let heart = synth_source(&self.source_spec(SourceKind::Heart, self.subject_id, self.heart_seed))?;
        let lung = synth_source(&self.source_spec(SourceKind::Lung, self.subject_id, self.lung_seed))?;
        let noise_spec = self.noise_kind.map(|k| self.source_spec(k, self.noise_id, self.noise_seed));
        let noise_wave = noise_spec.as_ref().map(synth_source).transpose()?;
        let silence = noise_spec.as_ref().and_then(disconnect_interval);
        let firs = self.firs();
        let ni = noise_wave.as_ref().map(|w| NoiseInput {
            wave: w,
            rel_db: self.rel_db_noise,
            silence: silence.as_ref(),
        });
        let Mixed { mixture, heart, lung, noise } = mix(&heart, &lung, self.rel_db_lung, ni, firs.as_ref())?;
        let sample = MixtureSample {
            mixture,
            target_heart: heart,
            target_lung: lung,
            noise,
            noise_kind: self.noise_kind,
            group: self.group,
            rel_db_lung: self.rel_db_lung,
            rel_db_noise: self.rel_db_noise,
            mixing: self.mode,
            fir_filters: firs,
            subject_id: self.subject_id,
            partition: self.partition,
            silence,
        };
        match self.crop {
            Some((offset, len)) => crop_at(&sample, offset, len),
            None => Ok(sample),
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = String::new();
        let noise = self.noise_kind.map_or("none", SourceKind::as_str);
        let crop = self.crop.map_or("none".to_string(), |(o, l)| format!("{o}:{l}"));
        write!(
            s,
            "sample_index={} partition={} group={} subject={} duration_s={} heart_bpm={} heart_seed={} \
             breath_bpm={} lung_seed={} noise={} noise_id={} noise_seed={} rel_db_lung={} rel_db_noise={} \
             mode={} fir_seed={} fir_len={}..{} crop={}",
            self.index,
            self.partition,
            self.group,
            self.subject_id,
            self.duration_s,
            self.heart_bpm,
            self.heart_seed,
            self.breath_bpm,
            self.lung_seed,
            noise,
            self.noise_id,
            self.noise_seed,
            self.rel_db_lung,
            self.rel_db_noise,
            self.mode,
            self.fir_seed,
            self.fir_min,
            self.fir_max,
            crop
        )
        .unwrap();
        s
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut kv = HashMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("manifest token without '=': {tok:?}")))?;
            if kv.insert(k, v).is_some() {
                return Err(Error::Format(format!("duplicate manifest key {k}")));
            }
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Format(format!("manifest line lacks {k}")));
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("bad value for {k}: {v:?}")))
        }
        let fmt_err = |e: Error| Error::Format(e.to_string());
        let noise = get("noise")?;
        let (fir_min, fir_max) = get("fir_len")?
            .split_once("..")
            .ok_or_else(|| Error::Format("fir_len must be min..max".into()))?;
        let crop = match get("crop")? {
            "none" => None,
            c => {
                let (o, l) = c.split_once(':').ok_or_else(|| Error::Format("crop must be offset:len".into()))?;
                Some((num("crop", o)?, num("crop", l)?))
            }
        };
        let d = Self {
            index: num("sample_index", get("sample_index")?)?,
            partition: get("partition")?.parse().map_err(fmt_err)?,
            group: get("group")?.parse().map_err(fmt_err)?,
            subject_id: num("subject", get("subject")?)?,
            duration_s: num("duration_s", get("duration_s")?)?,
            heart_bpm: num("heart_bpm", get("heart_bpm")?)?,
            heart_seed: num("heart_seed", get("heart_seed")?)?,
            breath_bpm: num("breath_bpm", get("breath_bpm")?)?,
            lung_seed: num("lung_seed", get("lung_seed")?)?,
            noise_kind: if noise == "none" { None } else { Some(noise.parse().map_err(fmt_err)?) },
            noise_id: num("noise_id", get("noise_id")?)?,
            noise_seed: num("noise_seed", get("noise_seed")?)?,
            rel_db_lung: num("rel_db_lung", get("rel_db_lung")?)?,
            rel_db_noise: num("rel_db_noise", get("rel_db_noise")?)?,
            mode: get("mode")?.parse().map_err(fmt_err)?,
            fir_seed: num("fir_seed", get("fir_seed")?)?,
            fir_min: num("fir_len", fir_min)?,
            fir_max: num("fir_len", fir_max)?,
            crop,
        };
        if kv.len() != 18 {
            return Err(Error::Format(format!("manifest line has {} keys, expected 18", kv.len())));
        }
        Ok(d)
    }
}

/// Sizes of the subject and noise-recording pools and the test-grid depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetParams {
    pub seed: u64,
    pub duration_s: f64,
    pub subjects: [u32; 3],
    pub cry_recordings: [u32; 3],
    pub steth_recordings: [u32; 3],
    /// Shared across partitions.
    pub bubble_devices: u32,
    pub vent_devices: u32,
    pub mixtures_per_cell: usize,
    pub val_count: usize,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            seed: 0,
            duration_s: 10.0,
            subjects: [40, 8, 12],
            cry_recordings: [6, 2, 3],
            steth_recordings: [10, 3, 5],
            bubble_devices: 8,
            vent_devices: 6,
            mixtures_per_cell: 1,
            val_count: 64,
        }
    }
}

fn pidx(p: Partition) -> usize {
    match p {
        Partition::Train => 0,
        Partition::Val => 1,
        Partition::Test => 2,
    }
}

impl DatasetParams {
    pub fn subject_pool(&self, p: Partition) -> Vec<u32> {
        (0..self.subjects[pidx(p)]).map(|i| p.id_base() + i).collect()
    }

    fn noise_pool(&self, kind: SourceKind, p: Partition) -> Vec<u32> {
        match kind {
            SourceKind::Cry => (0..self.cry_recordings[pidx(p)]).map(|i| p.id_base() + i).collect(),
            SourceKind::StethRub | SourceKind::StethDisconnect => {
                (0..self.steth_recordings[pidx(p)]).map(|i| p.id_base() + 500 + i).collect()
            }
            SourceKind::CpapBubble => (1..=self.bubble_devices).collect(),
            SourceKind::CpapVent => (1..=self.vent_devices).collect(),
            SourceKind::Heart | SourceKind::Lung => Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.subjects.contains(&0) {
            return Err(Error::invalid("every partition needs at least one subject"));
        }
        if self.cry_recordings.contains(&0) || self.steth_recordings.contains(&0) {
            return Err(Error::invalid("every partition needs cry and stethoscope recordings"));
        }
        if self.bubble_devices == 0 || self.vent_devices == 0 {
            return Err(Error::invalid("at least one CPAP device of each type is required"));
        }
        if self.subjects.iter().any(|&s| s > 500) {
            return Err(Error::invalid("at most 500 subjects per partition"));
        }
        Ok(())
    }

    /// Common fields of a descriptor drawn from `rng`.
    fn base(&self, index: u64, partition: Partition, group: NoiseGroup, rng: &mut ChaCha8Rng) -> SampleDescriptor {
        let subject = *self.subject_pool(partition).choose(rng).expect("non-empty pool");
        let prof = SubjectProfile::of(subject);
        SampleDescriptor {
            index,
            partition,
            group,
            subject_id: subject,
            duration_s: self.duration_s,
            heart_bpm: (prof.heart_bpm * rng.gen_range(0.9..1.1)).clamp(100.0, 200.0),
            heart_seed: rng.gen(),
            breath_bpm: (prof.breath_bpm * rng.gen_range(0.9..1.1)).clamp(30.0, 80.0),
            lung_seed: rng.gen(),
            noise_kind: None,
            noise_id: 0,
            noise_seed: 0,
            rel_db_lung: 0.0,
            rel_db_noise: 0.0,
            mode: MixingMode::Additive,
            fir_seed: rng.gen(),
            fir_min: 3,
            fir_max: 3,
            crop: None,
        }
    }

    fn with_noise(&self, d: &mut SampleDescriptor, kind: Option<SourceKind>, rng: &mut ChaCha8Rng) {
        d.noise_kind = kind;
        if let Some(k) = kind {
            d.noise_id = *self.noise_pool(k, d.partition).choose(rng).expect("non-empty pool");
            d.noise_seed = rng.gen();
        }
    }

    /// Test grid for one noise group: every noise kind, lung level, noise
    /// level and mixing mode, `mixtures_per_cell` times.
    pub fn test_manifest(&self, group: NoiseGroup) -> Result<DatasetManifest> {
        self.validate()?;
        let mut samples = Vec::new();
        let kinds: Vec<Option<SourceKind>> = if group == NoiseGroup::NoNoise {
            vec![None]
        } else {
            group.kinds().iter().copied().map(Some).collect()
        };
        let noise_levels: &[f64] = if group == NoiseGroup::NoNoise { &[0.0] } else { &TEST_DB_GRID };
        let group_seed = mix64(self.seed, 0x7E57_0000 + group as u64);
        for &kind in &kinds {
            for &lung_db in &TEST_DB_GRID {
                for &noise_db in noise_levels {
                    for mode in [MixingMode::Additive, MixingMode::Convolutive] {
                        for _ in 0..self.mixtures_per_cell {
                            let index = samples.len() as u64;
                            let mut rng = ChaCha8Rng::seed_from_u64(mix64(group_seed, index));
                            let mut d = self.base(index, Partition::Test, group, &mut rng);
                            self.with_noise(&mut d, kind, &mut rng);
                            d.rel_db_lung = lung_db;
                            d.rel_db_noise = noise_db;
                            d.mode = mode;
                            samples.push(d);
                        }
                    }
                }
            }
        }
        Ok(DatasetManifest { params: self.clone(), samples })
    }

    /// Number of samples `test_manifest(group)` produces.
    pub fn test_count(&self, group: NoiseGroup) -> usize {
        let cells = match group {
            NoiseGroup::NoNoise => TEST_DB_GRID.len(),
            g => g.kinds().len() * TEST_DB_GRID.len() * TEST_DB_GRID.len(),
        };
        cells * 2 * self.mixtures_per_cell
    }

    /// Training-style descriptor with continuous levels.
    pub fn train_like(
        &self,
        partition: Partition,
        index: u64,
        seed: u64,
        sampling: &TrainSampling,
    ) -> Result<SampleDescriptor> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed, index));
        let mut kinds = vec![None, Some(SourceKind::Cry), Some(SourceKind::CpapBubble), Some(SourceKind::CpapVent)];
        if sampling.include_steth {
            kinds.extend([Some(SourceKind::StethRub), Some(SourceKind::StethDisconnect)]);
        }
        let kind = *kinds.choose(&mut rng).unwrap();
        let group = match kind {
            None => NoiseGroup::NoNoise,
            Some(SourceKind::CpapBubble | SourceKind::CpapVent) => NoiseGroup::RespSupport,
            Some(_) => NoiseGroup::General,
        };
        let mut d = self.base(index, partition, group, &mut rng);
        self.with_noise(&mut d, kind, &mut rng);
        d.rel_db_lung = rng.gen_range(-10.0..=10.0);
        d.rel_db_noise = if kind.is_some() {
            rng.gen_range(sampling.noise_db.0..=sampling.noise_db.1)
        } else {
            0.0
        };
        d.mode = if rng.gen_bool(0.5) { MixingMode::Additive } else { MixingMode::Convolutive };
        d.fir_min = 3;
        d.fir_max = 5;
        let total = (self.duration_s * crate::signal::SAMPLE_RATE_HZ as f64).round() as usize;
        if let Some(len) = sampling.crop_len {
            if len >= total {
                return Err(Error::invalid(format!("crop of {len} samples not shorter than {total}")));
            }
            d.crop = Some((rng.gen_range(0..=total - len), len));
        }
        Ok(d)
    }

    /// Fixed validation set drawn like the first training phase, uncropped.
    pub fn val_manifest(&self) -> Result<DatasetManifest> {
        let sampling = TrainSampling { crop_len: None, ..TrainSampling::default() };
        let seed = mix64(self.seed, 0x0A11);
        let samples = (0..self.val_count as u64)
            .map(|i| self.train_like(Partition::Val, i, seed, &sampling))
            .collect::<Result<_>>()?;
        Ok(DatasetManifest { params: self.clone(), samples })
    }

    /// Manifest for a partition; `group` restricts the test partition.
    pub fn manifest(&self, partition: Partition, group: Option<NoiseGroup>, train_count: usize) -> Result<DatasetManifest> {
        match partition {
            Partition::Test => {
                let groups: Vec<NoiseGroup> = group.map_or(NoiseGroup::ALL.to_vec(), |g| vec![g]);
                let mut samples = Vec::new();
                for g in groups {
                    for mut d in self.test_manifest(g)?.samples {
                        d.index = samples.len() as u64;
                        samples.push(d);
                    }
                }
                Ok(DatasetManifest { params: self.clone(), samples })
            }
            Partition::Val => self.val_manifest(),
            Partition::Train => {
                let stream = TrainStream::new(self.clone(), self.seed, TrainSampling::default())?;
                let samples = (0..train_count as u64).map(|i| stream.descriptor(i)).collect::<Result<_>>()?;
                Ok(DatasetManifest { params: self.clone(), samples })
            }
        }
    }
}

/// Training-stream sampling rules.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSampling {
    /// Inclusive noise level range (dB re heart).
    pub noise_db: (f64, f64),
    pub crop_len: Option<usize>,
    pub include_steth: bool,
}

impl Default for TrainSampling {
    fn default() -> Self {
        Self {
            noise_db: (-20.0, 0.0),
            crop_len: Some(32000),
            include_steth: false,
        }
    }
}

/// Endless, index-addressable training samples.
#[derive(Debug, Clone)]
pub struct TrainStream {
    pub params: DatasetParams,
    pub seed: u64,
    pub sampling: TrainSampling,
}

impl TrainStream {
    pub fn new(params: DatasetParams, seed: u64, sampling: TrainSampling) -> Result<Self> {
        params.validate()?;
        if sampling.noise_db.0 > sampling.noise_db.1 {
            return Err(Error::invalid("noise range is empty"));
        }
        Ok(Self { params, seed, sampling })
    }

    pub fn descriptor(&self, index: u64) -> Result<SampleDescriptor> {
        self.params
            .train_like(Partition::Train, index, mix64(self.seed, 0x7EA1), &self.sampling)
    }

    pub fn sample(&self, index: u64) -> Result<MixtureSample> {
        self.descriptor(index)?.render()
    }
}

/// Descriptor list plus the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub params: DatasetParams,
    pub samples: Vec<SampleDescriptor>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = format!(
            "# seed={} duration_s={} subjects={:?} cry_recordings={:?} steth_recordings={:?} \
             bubble_devices={} vent_devices={} mixtures_per_cell={} val_count={}\n",
            p.seed,
            p.duration_s,
            p.subjects,
            p.cry_recordings,
            p.steth_recordings,
            p.bubble_devices,
            p.vent_devices,
            p.mixtures_per_cell,
            p.val_count
        );
        for d in &self.samples {
            s.push_str(&d.to_line());
            s.push('\n');
        }
        s
    }

    /// Parses descriptor lines; `#` lines are comments.
    pub fn parse(text: &str) -> Result<Vec<SampleDescriptor>> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(SampleDescriptor::parse_line)
            .collect()
    }

    /// Fails if any subject appears in more than one partition.
    pub fn check_disjoint(samples: &[SampleDescriptor]) -> Result<()> {
        let mut owner: HashMap<u32, Partition> = HashMap::new();
        for d in samples {
            match owner.get(&d.subject_id) {
                Some(&p) if p != d.partition => {
                    let (a, b) = if p < d.partition { (p, d.partition) } else { (d.partition, p) };
                    return Err(Error::SubjectLeakage {
                        subject: d.subject_id,
                        first: a.to_string(),
                        second: b.to_string(),
                    });
                }
                _ => {
                    owner.insert(d.subject_id, d.partition);
                }
            }
        }
        Ok(())
    }
}

/// Cuts `[offset, offset + len)` from every channel of `x`.
pub fn crop_at(x: &MixtureSample, offset: usize, len: usize) -> Result<MixtureSample> {
    let n = x.mixture.len();
    if len == 0 || offset + len > n {
        return Err(Error::invalid(format!("crop {offset}+{len} exceeds length {n}")));
    }
    let cut = |w: &Waveform| Waveform::new(w.samples()[offset..offset + len].to_vec(), w.sample_rate_hz());
    let silence = x.silence.as_ref().and_then(|iv| {
        let (s, e) = (iv.start.max(offset), iv.end.min(offset + len));
        (s < e).then(|| s - offset..e - offset)
    });
    Ok(MixtureSample {
        mixture: cut(&x.mixture)?,
        target_heart: cut(&x.target_heart)?,
        target_lung: cut(&x.target_lung)?,
        noise: cut(&x.noise)?,
        silence,
        fir_filters: x.fir_filters.clone(),
        ..*x
    })
}

/// Crop of `crop_s` seconds at an offset uniform over all valid positions.
pub fn random_crop<R: Rng + ?Sized>(x: &MixtureSample, crop_s: f64, rng: &mut R) -> Result<MixtureSample> {
    let len = (crop_s * x.mixture.sample_rate_hz() as f64).round() as usize;
    let n = x.mixture.len();
    if len == 0 || len >= n {
        return Err(Error::invalid(format!("crop of {len} samples must be shorter than {n}")));
    }
    crop_at(x, rng.gen_range(0..=n - len), len)
}
