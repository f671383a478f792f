//! Beat, note and accent extraction from audio, compiled into a haptic event
//! script addressed to the five fingers of one hand.

use std::cmp::Ordering;
use std::fmt;
use std::io::Cursor;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WINDOW: usize = 4096;
pub const DEFAULT_HOP: usize = 1024;
pub const DEFAULT_ONSET_WINDOW: usize = 1024;
pub const DEFAULT_ONSET_HOP: usize = 256;
pub const DEFAULT_NOTE_THRESHOLD: f64 = 0.5;
pub const MAX_NOTES_PER_FRAME: usize = 3;
pub const SCRIPT_VERSION: u32 = 1;

const CHROMA_MIN_HZ: f64 = 27.5;
const CHROMA_MAX_HZ: f64 = 4186.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("could not decode audio: {0}")]
    Decode(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("window size {0} must be a power of two and at least 32")]
    InvalidWindow(usize),
    #[error("hop {hop} must lie in 1..={window}")]
    InvalidHop { hop: usize, window: usize },
    #[error("event at {t}s lies beyond the script duration {duration}s")]
    EventBeyondDuration { t: f64, duration: f64 },
    #[error("audio is {seconds:.1}s long, the limit is {limit:.0}s")]
    AudioTooLong { seconds: f64, limit: f64 },
    #[error("malformed script: {0}")]
    MalformedScript(String),
}

impl AudioError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Decode(_) => "DecodeError",
            Self::UnsupportedEncoding(_) => "UnsupportedEncoding",
            Self::InvalidWindow(_) => "InvalidWindow",
            Self::InvalidHop { .. } => "InvalidHop",
            Self::EventBeyondDuration { .. } => "EventBeyondDuration",
            Self::AudioTooLong { .. } => "AudioTooLong",
            Self::MalformedScript(_) => "MalformedScript",
        }
    }
}

/// Mono samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    /// Builds a buffer, clamping samples into [-1, 1].
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// 16-bit PCM mono WAV encoding of the buffer.
    pub fn to_wav_pcm16(&self) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut out = Cursor::new(Vec::new());
        let mut writer = hound::WavWriter::new(&mut out, spec).expect("in-memory writer");
        for &s in &self.samples {
            let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(v).expect("in-memory write");
        }
        writer.finalize().expect("in-memory finalize");
        out.into_inner()
    }
}

/// Decodes 16-bit PCM or 32-bit float WAV data, mixing stereo down to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    if bytes.len() < 4 || &bytes[..4] != b"RIFF" {
        return Err(AudioError::Decode("missing RIFF header".into()));
    }
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(map_hound)?;
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{} channels",
            spec.channels
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (format, bits) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "{bits}-bit {format:?}"
            )))
        }
    };
    let channels = spec.channels as usize;
    let mono = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(AudioBuffer::new(mono, spec.sample_rate))
}

fn map_hound(e: hound::Error) -> AudioError {
    match e {
        hound::Error::Unsupported => AudioError::UnsupportedEncoding("codec".into()),
        other => AudioError::Decode(other.to_string()),
    }
}

/// Magnitude frames of a Hann-windowed short-time Fourier transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<f64>>,
    pub window_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// Time, in seconds, of the first analysed sample. Negative when the
    /// signal was front-padded.
    pub origin: f64,
}

impl Spectrogram {
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.window_size as f64
    }

    /// Time of the centre of frame `t`.
    pub fn frame_center(&self, t: usize) -> f64 {
        self.origin + (t * self.hop) as f64 / self.sample_rate as f64
            + self.window_size as f64 / (2.0 * self.sample_rate as f64)
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn check_stft_params(window_size: usize, hop: usize) -> Result<(), AudioError> {
    if window_size < 32 || !window_size.is_power_of_two() {
        return Err(AudioError::InvalidWindow(window_size));
    }
    if hop == 0 || hop > window_size {
        return Err(AudioError::InvalidHop {
            hop,
            window: window_size,
        });
    }
    Ok(())
}

pub fn stft(buffer: &AudioBuffer, window_size: usize, hop: usize) -> Result<Spectrogram, AudioError> {
    check_stft_params(window_size, hop)?;
    Ok(stft_samples(&buffer.samples, buffer.sample_rate, window_size, hop, 0.0))
}

/// STFT of the signal padded with `window_size / 2` zeros at both ends, so
/// that frame `t` is centred on sample `t * hop`.
pub fn stft_centered(
    buffer: &AudioBuffer,
    window_size: usize,
    hop: usize,
) -> Result<Spectrogram, AudioError> {
    check_stft_params(window_size, hop)?;
    let pad = window_size / 2;
    let mut padded = vec![0.0; pad];
    padded.extend_from_slice(&buffer.samples);
    padded.extend(std::iter::repeat_n(0.0, pad));
    let origin = -(pad as f64) / buffer.sample_rate as f64;
    Ok(stft_samples(&padded, buffer.sample_rate, window_size, hop, origin))
}

fn stft_samples(samples: &[f64], sample_rate: u32, window_size: usize, hop: usize, origin: f64) -> Spectrogram {
    let window = hann(window_size);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_size);
    let count = if samples.len() >= window_size {
        (samples.len() - window_size) / hop + 1
    } else {
        0
    };
    let mut buf = vec![Complex::new(0.0, 0.0); window_size];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let frames = (0..count)
        .map(|t| {
            let seg = &samples[t * hop..t * hop + window_size];
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&window) {
                *b = Complex::new(s * w, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            buf[..=window_size / 2].iter().map(|c| c.norm()).collect()
        })
        .collect();
    Spectrogram {
        frames,
        window_size,
        hop,
        sample_rate,
        origin,
    }
}

/// One of the twelve octave-equivalent note names, 0 = C through 11 = B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PitchClass(u8);

impl PitchClass {
    pub const NAMES: [&'static str; 12] = [
        "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B",
    ];

    pub fn new(index: u8) -> Option<Self> {
        (index < 12).then_some(Self(index))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.0 as usize]
    }

    pub fn all() -> impl Iterator<Item = PitchClass> {
        (0..12).map(PitchClass)
    }

    /// Pitch class of the equal-tempered semitone nearest to `hz` (A4 = 440 Hz).
    pub fn nearest(hz: f64) -> Self {
        let midi = (69.0 + 12.0 * (hz / 440.0).log2()).round() as i64;
        Self(midi.rem_euclid(12) as u8)
    }
}

impl TryFrom<u8> for PitchClass {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(v).ok_or_else(|| format!("pitch class {v} out of range"))
    }
}

impl From<PitchClass> for u8 {
    fn from(pc: PitchClass) -> u8 {
        pc.0
    }
}

impl fmt::Display for PitchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
    Little,
}

impl Finger {
    pub const ALL: [Finger; 5] = [
        Finger::Thumb,
        Finger::Index,
        Finger::Middle,
        Finger::Ring,
        Finger::Little,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Finger::Thumb => "thumb",
            Finger::Index => "index",
            Finger::Middle => "middle",
            Finger::Ring => "ring",
            Finger::Little => "little",
        }
    }
}

/// Thumb: C C# A A#. Index: D D# B. Middle: E. Ring: F F#. Little: G G#.
pub fn finger_for_pitch_class(pc: PitchClass) -> Finger {
    match pc.index() {
        0 | 1 | 9 | 10 => Finger::Thumb,
        2 | 3 | 11 => Finger::Index,
        4 => Finger::Middle,
        5 | 6 => Finger::Ring,
        7 | 8 => Finger::Little,
        _ => unreachable!("pitch class index is always below 12"),
    }
}

/// Event kinds, declared in their tie-break order within one timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Beat,
    Note,
    Accent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HapticEvent {
    pub t: f64,
    pub kind: EventKind,
    pub finger: Finger,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_class: Option<PitchClass>,
    pub intensity: f64,
}

impl HapticEvent {
    pub fn beat(t: f64, intensity: f64) -> Self {
        Self {
            t,
            kind: EventKind::Beat,
            finger: Finger::Thumb,
            pitch_class: None,
            intensity: intensity.clamp(0.0, 1.0),
        }
    }

    pub fn accent(t: f64, intensity: f64) -> Self {
        Self {
            kind: EventKind::Accent,
            ..Self::beat(t, intensity)
        }
    }

    pub fn note(t: f64, pc: PitchClass, intensity: f64) -> Self {
        Self {
            t,
            kind: EventKind::Note,
            finger: finger_for_pitch_class(pc),
            pitch_class: Some(pc),
            intensity: intensity.clamp(0.0, 1.0),
        }
    }

    fn order(&self, other: &Self) -> Ordering {
        self.t
            .total_cmp(&other.t)
            .then(self.kind.cmp(&other.kind))
            .then(self.pitch_class.cmp(&other.pitch_class))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HapticScript {
    pub events: Vec<HapticEvent>,
    pub duration: f64,
}

impl HapticScript {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Line-delimited JSON: a header record followed by one record per event.
    pub fn to_records(&self, source: &str) -> String {
        let header = ScriptHeader {
            version: SCRIPT_VERSION,
            duration: self.duration,
            source: source.to_string(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`HapticScript::to_records`], checking ordering,
    /// bounds and the note/pitch-class pairing.
    pub fn from_records(text: &str) -> Result<(ScriptHeader, HapticScript), AudioError> {
        let bad = |m: String| AudioError::MalformedScript(m);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ScriptHeader = serde_json::from_str(lines.next().ok_or_else(|| bad("empty script".into()))?)
            .map_err(|e| bad(format!("header: {e}")))?;
        if header.version != SCRIPT_VERSION {
            return Err(bad(format!("unknown version {}", header.version)));
        }
        let mut events = Vec::new();
        for (i, line) in lines.enumerate() {
            let e: HapticEvent = serde_json::from_str(line).map_err(|err| bad(format!("event {i}: {err}")))?;
            if (e.kind == EventKind::Note) != e.pitch_class.is_some() {
                return Err(bad(format!("event {i}: pitch_class must be present exactly on notes")));
            }
            if !(0.0..=1.0).contains(&e.intensity) || e.t < 0.0 || e.t > header.duration {
                return Err(bad(format!("event {i}: out of range")));
            }
            if events.last().is_some_and(|p: &HapticEvent| p.t > e.t) {
                return Err(bad(format!("event {i}: out of order")));
            }
            events.push(e);
        }
        let duration = header.duration;
        Ok((header, HapticScript { events, duration }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptHeader {
    pub version: u32,
    pub duration: f64,
    pub source: String,
}

/// Per-frame 12-bin pitch-class energy. Each bin between 27.5 Hz and 4186 Hz
/// adds its magnitude to the class of its nearest semitone.
pub fn chroma(spec: &Spectrogram) -> Vec<[f64; 12]> {
    let classes: Vec<Option<usize>> = (0..=spec.window_size / 2)
        .map(|b| {
            let hz = spec.bin_hz(b);
            (CHROMA_MIN_HZ..=CHROMA_MAX_HZ)
                .contains(&hz)
                .then(|| PitchClass::nearest(hz).index() as usize)
        })
        .collect();
    spec.frames
        .iter()
        .map(|frame| {
            let mut v = [0.0; 12];
            for (mag, class) in frame.iter().zip(&classes) {
                if let Some(c) = class {
                    v[*c] += mag;
                }
            }
            v
        })
        .collect()
}

/// Note events from a chromagram. Each frame keeps up to three classes at or
/// above `rel_threshold` times the frame maximum; a class that stays active
/// over consecutive frames yields one event at the first of them.
pub fn detect_notes(chromagram: &[[f64; 12]], hop_seconds: f64, rel_threshold: f64) -> Vec<HapticEvent> {
    let mut events = Vec::new();
    let mut prev_active = [false; 12];
    for (i, frame) in chromagram.iter().enumerate() {
        let mut active = [false; 12];
        let max = frame.iter().cloned().fold(0.0, f64::max);
        if max > f64::EPSILON {
            let mut ranked: Vec<usize> = (0..12).filter(|&c| frame[c] >= rel_threshold * max).collect();
            ranked.sort_by(|&a, &b| frame[b].total_cmp(&frame[a]).then(a.cmp(&b)));
            ranked.truncate(MAX_NOTES_PER_FRAME);
            for c in ranked {
                active[c] = true;
                if !prev_active[c] {
                    let pc = PitchClass::new(c as u8).expect("class below 12");
                    events.push(HapticEvent::note(i as f64 * hop_seconds, pc, frame[c] / max));
                }
            }
        }
        prev_active = active;
    }
    events.sort_by(HapticEvent::order);
    events
}

/// Tuning for [`detect_beats_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeatParams {
    /// Span of the centred moving mean used as the adaptive threshold.
    pub mean_window: f64,
    /// Offset added to the moving mean, as a fraction of the envelope maximum.
    pub offset: f64,
    pub min_separation: f64,
}

impl Default for BeatParams {
    fn default() -> Self {
        Self {
            mean_window: 0.5,
            offset: 0.05,
            min_separation: 0.1,
        }
    }
}

/// Half-wave rectified spectral flux. The first frame is compared against
/// silence.
pub fn onset_envelope(spec: &Spectrogram) -> Vec<f64> {
    let mut prev: Option<&Vec<f64>> = None;
    spec.frames
        .iter()
        .map(|frame| {
            let flux = match prev {
                None => frame.iter().sum(),
                Some(p) => frame.iter().zip(p).map(|(m, q)| (m - q).max(0.0)).sum(),
            };
            prev = Some(frame);
            flux
        })
        .collect()
}

pub fn detect_beats(spec: &Spectrogram) -> Vec<HapticEvent> {
    detect_beats_with(spec, &BeatParams::default())
}

/// Beats are peaks of the onset envelope that clear a moving-mean threshold,
/// kept greedily from the strongest down so that no two lie closer than the
/// minimum separation. Beat time is the frame centre.
pub fn detect_beats_with(spec: &Spectrogram, params: &BeatParams) -> Vec<HapticEvent> {
    let env = onset_envelope(spec);
    let global = env.iter().cloned().fold(0.0, f64::max);
    if global <= 0.0 {
        return Vec::new();
    }
    let hop_s = spec.hop_seconds();
    let half = ((params.mean_window / 2.0) / hop_s).round() as usize;
    let delta = params.offset * global;

    let mut peaks: Vec<usize> = (0..env.len())
        .filter(|&t| {
            let left = if t == 0 { 0.0 } else { env[t - 1] };
            let right = env.get(t + 1).copied().unwrap_or(0.0);
            if !(env[t] > left && env[t] >= right) {
                return false;
            }
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(env.len() - 1);
            let mean = env[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
            env[t] > mean + delta
        })
        .collect();
    peaks.sort_by(|&a, &b| env[b].total_cmp(&env[a]).then(a.cmp(&b)));

    let mut kept: Vec<usize> = Vec::new();
    for p in peaks {
        let tp = spec.frame_center(p);
        if kept
            .iter()
            .all(|&q| (spec.frame_center(q) - tp).abs() >= params.min_separation)
        {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    kept.into_iter()
        .map(|p| HapticEvent::beat(spec.frame_center(p).max(0.0), env[p] / global))
        .collect()
}

/// Linearly interpolated percentile, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Beats whose intensity strictly exceeds the 90th percentile of all beat
/// intensities, re-emitted as accents.
pub fn detect_accents(beats: &[HapticEvent]) -> Vec<HapticEvent> {
    let intensities: Vec<f64> = beats.iter().map(|b| b.intensity).collect();
    let Some(p90) = percentile(&intensities, 0.9) else {
        return Vec::new();
    };
    beats
        .iter()
        .filter(|b| b.intensity > p90)
        .map(|b| HapticEvent::accent(b.t, b.intensity))
        .collect()
}

/// Merges event streams into one script sorted by time, then kind
/// (beat, note, accent), then pitch class.
pub fn compile_script(
    notes: &[HapticEvent],
    beats: &[HapticEvent],
    accents: &[HapticEvent],
    duration: f64,
) -> Result<HapticScript, AudioError> {
    let mut events: Vec<HapticEvent> = Vec::with_capacity(notes.len() + beats.len() + accents.len());
    for e in notes.iter().chain(beats).chain(accents) {
        if e.t > duration {
            return Err(AudioError::EventBeyondDuration { t: e.t, duration });
        }
        let mut e = *e;
        if let Some(pc) = e.pitch_class {
            e.finger = finger_for_pitch_class(pc);
        }
        events.push(e);
    }
    events.sort_by(HapticEvent::order);
    Ok(HapticScript { events, duration })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TutorialKind {
    Rhythm,
    Notes,
    Accents,
}

impl std::str::FromStr for TutorialKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rhythm" => Ok(Self::Rhythm),
            "notes" => Ok(Self::Notes),
            "accents" => Ok(Self::Accents),
            other => Err(format!("unknown tutorial kind '{other}'")),
        }
    }
}

const TUTORIAL_BPM: f64 = 90.0;
const TUTORIAL_SECONDS: f64 = 16.0;

pub fn tutorial_script(kind: TutorialKind) -> HapticScript {
    let period = 60.0 / TUTORIAL_BPM;
    let beat_times = || {
        (0..)
            .map(move |i| i as f64 * period)
            .take_while(|&t| t < TUTORIAL_SECONDS)
            .enumerate()
    };
    let (notes, beats, accents, duration) = match kind {
        TutorialKind::Rhythm => {
            let beats: Vec<_> = beat_times().map(|(_, t)| HapticEvent::beat(t, 1.0)).collect();
            (vec![], beats, vec![], TUTORIAL_SECONDS)
        }
        TutorialKind::Notes => {
            // C major scale, C4 up to C5.
            let scale = [0u8, 2, 4, 5, 7, 9, 11, 0];
            let notes: Vec<_> = scale
                .iter()
                .enumerate()
                .map(|(i, &c)| HapticEvent::note(i as f64, PitchClass(c), 1.0))
                .collect();
            (notes, vec![], vec![], scale.len() as f64)
        }
        TutorialKind::Accents => {
            let mut beats = Vec::new();
            let mut accents = Vec::new();
            for (i, t) in beat_times() {
                let strong = i % 4 == 0;
                beats.push(HapticEvent::beat(t, if strong { 1.0 } else { 0.5 }));
                if strong {
                    accents.push(HapticEvent::accent(t, 1.0));
                }
            }
            (vec![], beats, accents, TUTORIAL_SECONDS)
        }
    };
    compile_script(&notes, &beats, &accents, duration).expect("tutorial events fit their duration")
}

/// Defaults for the full audio-to-script pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisParams {
    pub window_size: usize,
    pub hop: usize,
    pub onset_window: usize,
    pub onset_hop: usize,
    pub note_threshold: f64,
    pub beats: BeatParams,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            window_size: DEFAULT_WINDOW,
            hop: DEFAULT_HOP,
            onset_window: DEFAULT_ONSET_WINDOW,
            onset_hop: DEFAULT_ONSET_HOP,
            note_threshold: DEFAULT_NOTE_THRESHOLD,
            beats: BeatParams::default(),
        }
    }
}

/// Notes come from the chroma of a long-window STFT; beats and accents from
/// the spectral flux of a short-window, centred STFT.
pub fn analyze(buffer: &AudioBuffer, params: &AnalysisParams) -> Result<HapticScript, AudioError> {
    let tonal = stft(buffer, params.window_size, params.hop)?;
    let notes = detect_notes(&chroma(&tonal), tonal.hop_seconds(), params.note_threshold);
    let onset = stft_centered(buffer, params.onset_window, params.onset_hop)?;
    let duration = buffer.duration();
    let mut beats = detect_beats_with(&onset, &params.beats);
    // Centred frames can sit up to half a window past the last sample.
    beats.retain(|b| b.t <= duration);
    let accents = detect_accents(&beats);
    compile_script(&notes, &beats, &accents, duration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const SR: u32 = 44_100;

    fn sine(hz: f64, seconds: f64, amp: f64) -> Vec<f64> {
        let n = (seconds * SR as f64) as usize;
        (0..n).map(|i| amp * (2.0 * PI * hz * i as f64 / SR as f64).sin()).collect()
    }

    fn clicks(times: &[(f64, f64)], seconds: f64) -> AudioBuffer {
        let mut s = vec![0.0; (seconds * SR as f64) as usize];
        for &(t, amp) in times {
            let start = (t * SR as f64).round() as usize;
            for k in 0..64 {
                if let Some(v) = s.get_mut(start + k) {
                    *v += amp * (-(k as f64) / 12.0).exp();
                }
            }
        }
        AudioBuffer::new(s, SR)
    }

    fn wav_bytes(spec: hound::WavSpec, write: impl FnOnce(&mut hound::WavWriter<&mut Cursor<Vec<u8>>>)) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        let mut w = hound::WavWriter::new(&mut out, spec).unwrap();
        write(&mut w);
        w.finalize().unwrap();
        out.into_inner()
    }

    #[test]
    fn pcm16_scale_law() {
        let spec = hound::WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let bytes = wav_bytes(spec, |w| {
            for v in [0i16, 16384, -16384] {
                w.write_sample(v).unwrap();
            }
        });
        let buf = decode_wav(&bytes).unwrap();
        assert_eq!(buf.samples, vec![0.0, 0.5, -0.5]);
        assert_eq!(buf.sample_rate, 8000);
    }

    #[test]
    fn stereo_float_mixes_to_mono() {
        let spec = hound::WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 32, sample_format: hound::SampleFormat::Float };
        let bytes = wav_bytes(spec, |w| {
            for v in [0.5f32, -0.5, 0.25, 0.75] {
                w.write_sample(v).unwrap();
            }
        });
        assert_eq!(decode_wav(&bytes).unwrap().samples, vec![0.0, 0.5]);
    }

    #[test]
    fn wav_errors() {
        assert_eq!(decode_wav(b"RIFX0000WAVE").unwrap_err().code(), "DecodeError");
        assert_eq!(decode_wav(b"").unwrap_err().code(), "DecodeError");
        assert_eq!(decode_wav(b"RIFF\x04\x00\x00\x00WAVE").unwrap_err().code(), "DecodeError");
        let spec = hound::WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 8, sample_format: hound::SampleFormat::Int };
        let bytes = wav_bytes(spec, |w| w.write_sample(3i8).unwrap());
        assert_eq!(decode_wav(&bytes).unwrap_err().code(), "UnsupportedEncoding");
    }

    #[test]
    fn pcm16_round_trip() {
        let buf = AudioBuffer::new(vec![0.0, 0.25, -1.0, 0.999], 22_050);
        let back = decode_wav(&buf.to_wav_pcm16()).unwrap();
        for (a, b) in buf.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn frame_count_and_param_checks() {
        let buf = AudioBuffer::new(vec![0.0; 1024], SR);
        let spec = stft(&buf, 512, 256).unwrap();
        assert_eq!(spec.frames.len(), 3);
        assert!(spec.frames.iter().flatten().all(|&m| m == 0.0));
        assert_eq!(spec.frames[0].len(), 257);
        assert_eq!(stft(&AudioBuffer::new(vec![0.0; 100], SR), 512, 256).unwrap().frames.len(), 0);
        assert_eq!(stft(&buf, 500, 100).unwrap_err().code(), "InvalidWindow");
        assert_eq!(stft(&buf, 16, 8).unwrap_err().code(), "InvalidWindow");
        assert_eq!(stft(&buf, 512, 0).unwrap_err().code(), "InvalidHop");
        assert_eq!(stft(&buf, 512, 513).unwrap_err().code(), "InvalidHop");
    }

    #[test]
    fn bin_centred_sine_peaks_at_its_bin() {
        for bin in [5usize, 40, 100, 200] {
            let hz = bin as f64 * SR as f64 / 1024.0;
            let spec = stft(&AudioBuffer::new(sine(hz, 0.2, 0.8), SR), 1024, 512).unwrap();
            for frame in &spec.frames {
                let argmax = (0..frame.len()).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
                assert_eq!(argmax, bin);
            }
        }
    }

    #[test]
    fn parseval_per_frame() {
        let mut s = sine(440.0, 0.5, 0.5);
        for (i, v) in s.iter_mut().enumerate() {
            *v += 0.3 * ((i * 7919 % 1000) as f64 / 1000.0 - 0.5);
        }
        let buf = AudioBuffer::new(s, SR);
        let n = 2048;
        let spec = stft(&buf, n, 512).unwrap();
        let w = hann(n);
        for (t, frame) in spec.frames.iter().enumerate() {
            let time: f64 = (0..n).map(|i| (buf.samples[t * 512 + i] * w[i]).powi(2)).sum();
            let mut freq = frame[0].powi(2) + frame[n / 2].powi(2);
            freq += 2.0 * frame[1..n / 2].iter().map(|m| m * m).sum::<f64>();
            freq /= n as f64;
            assert!((time - freq).abs() <= 1e-6 * time.max(f64::MIN_POSITIVE));
        }
    }

    fn dominant(c: &[f64; 12]) -> usize {
        (0..12).max_by(|&a, &b| c[a].total_cmp(&c[b]).then(b.cmp(&a))).unwrap()
    }

    #[test]
    fn chroma_of_a_and_its_octave() {
        for hz in [440.0, 880.0] {
            let spec = stft(&AudioBuffer::new(sine(hz, 0.5, 0.5), SR), 4096, 1024).unwrap();
            for frame in chroma(&spec) {
                assert_eq!(dominant(&frame), 9);
            }
        }
        let silent = stft(&AudioBuffer::new(vec![0.0; 8192], SR), 4096, 1024).unwrap();
        assert!(chroma(&silent).iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn nearest_pitch_class() {
        assert_eq!(PitchClass::nearest(440.0).index(), 9);
        assert_eq!(PitchClass::nearest(261.63).index(), 0);
        assert_eq!(PitchClass::nearest(27.5).index(), 9);
        assert_eq!(PitchClass::nearest(4186.0).index(), 0);
    }

    #[test]
    fn sustained_tone_is_one_note() {
        let spec = stft(&AudioBuffer::new(sine(440.0, 1.0, 0.5), SR), 4096, 1024).unwrap();
        let notes = detect_notes(&chroma(&spec), spec.hop_seconds(), DEFAULT_NOTE_THRESHOLD);
        assert_eq!(notes.len(), 1);
        assert_eq!(notes[0].pitch_class, PitchClass::new(9));
        assert_eq!(notes[0].intensity, 1.0);
        assert_eq!(notes[0].finger, Finger::Thumb);
        assert_eq!(notes[0].t, 0.0);
    }

    #[test]
    fn two_tones_in_same_frames() {
        let c = sine(261.63, 1.0, 0.4);
        let e = sine(329.63, 1.0, 0.4);
        let mix: Vec<f64> = c.iter().zip(&e).map(|(a, b)| a + b).collect();
        let spec = stft(&AudioBuffer::new(mix, SR), 4096, 1024).unwrap();
        let notes = detect_notes(&chroma(&spec), spec.hop_seconds(), DEFAULT_NOTE_THRESHOLD);
        let classes: Vec<u8> = notes.iter().map(|n| n.pitch_class.unwrap().index()).collect();
        assert_eq!(classes, vec![0, 4]);
        assert_eq!(notes[0].t, notes[1].t);
    }

    #[test]
    fn note_cap_and_silence() {
        assert!(detect_notes(&[[0.0; 12]; 4], 0.1, 0.5).is_empty());
        let frame = [1.0, 0.9, 0.8, 0.7, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.6];
        let notes = detect_notes(&[frame], 0.1, 0.5);
        let classes: Vec<u8> = notes.iter().map(|n| n.pitch_class.unwrap().index()).collect();
        assert_eq!(classes, vec![0, 1, 2]);
        // A class that drops out and returns starts a new event.
        let notes = detect_notes(&[frame, [0.0; 12], frame], 0.5, 0.95);
        assert_eq!(notes.len(), 2);
        assert_eq!(notes[1].t, 1.0);
    }

    fn beat_spec(buf: &AudioBuffer) -> Spectrogram {
        stft_centered(buf, DEFAULT_ONSET_WINDOW, DEFAULT_ONSET_HOP).unwrap()
    }

    #[test]
    fn click_track_beats() {
        let grid: Vec<(f64, f64)> = (0..8).map(|i| (i as f64 * 0.5, 0.8)).collect();
        let beats = detect_beats(&beat_spec(&clicks(&grid, 4.0)));
        assert_eq!(beats.len(), 8, "{beats:?}");
        for (b, (t, _)) in beats.iter().zip(&grid) {
            assert!((b.t - t).abs() <= 0.010, "{} vs {}", b.t, t);
        }
        let gaps: Vec<f64> = beats.windows(2).map(|w| w[1].t - w[0].t).collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let sd = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64).sqrt();
        assert!(sd <= 0.010);
    }

    #[test]
    fn single_click_and_silence() {
        let beats = detect_beats(&beat_spec(&clicks(&[(1.0, 0.9)], 2.0)));
        assert_eq!(beats.len(), 1);
        assert!((beats[0].t - 1.0).abs() <= 0.02);
        assert!(detect_beats(&beat_spec(&AudioBuffer::new(vec![0.0; SR as usize], SR))).is_empty());
    }

    #[test]
    fn loud_click_is_the_only_accent() {
        let grid: Vec<(f64, f64)> = (0..10)
            .map(|i| (0.25 + i as f64 * 0.5, if i == 6 { 1.0 } else { 0.25 }))
            .collect();
        let beats = detect_beats(&beat_spec(&clicks(&grid, 5.2)));
        assert_eq!(beats.len(), 10);
        let accents = detect_accents(&beats);
        assert_eq!(accents.len(), 1);
        assert!((accents[0].t - 3.25).abs() <= 0.01);
    }

    #[test]
    fn accent_edge_cases() {
        assert!(detect_accents(&[]).is_empty());
        let uniform: Vec<_> = (0..8).map(|i| HapticEvent::beat(i as f64, 0.7)).collect();
        assert!(detect_accents(&uniform).is_empty());
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.9), Some(4.6));
    }

    #[test]
    fn finger_examples() {
        let f = |i| finger_for_pitch_class(PitchClass::new(i).unwrap());
        assert_eq!(f(0), Finger::Thumb);
        assert_eq!(f(4), Finger::Middle);
        assert_eq!(f(8), Finger::Little);
        let mut sizes = [0; 5];
        for pc in PitchClass::all() {
            let finger = finger_for_pitch_class(pc);
            sizes[Finger::ALL.iter().position(|&x| x == finger).unwrap()] += 1;
        }
        assert_eq!(sizes, [4, 3, 1, 2, 2]);
    }

    #[test]
    fn compile_orders_kinds_and_checks_duration() {
        assert!(compile_script(&[], &[], &[], 0.0).unwrap().events.is_empty());
        let note = HapticEvent::note(1.0, PitchClass::new(2).unwrap(), 0.5);
        let beat = HapticEvent::beat(1.0, 0.5);
        let s = compile_script(&[note], &[beat], &[], 2.0).unwrap();
        assert_eq!(s.events[0].kind, EventKind::Beat);
        assert_eq!(s.events[1].finger, Finger::Index);
        let err = compile_script(&[note], &[], &[], 0.5).unwrap_err();
        assert_eq!(err.code(), "EventBeyondDuration");
    }

    #[test]
    fn tutorials() {
        let r = tutorial_script(TutorialKind::Rhythm);
        assert_eq!(r.events.len(), 24);
        assert!(r.events.iter().all(|e| e.kind == EventKind::Beat));
        let n = tutorial_script(TutorialKind::Notes);
        assert_eq!(n.events.len(), 8);
        assert_eq!(n.events[3].pitch_class, PitchClass::new(5));
        assert_eq!(n.events[3].finger, Finger::Ring);
        let a = tutorial_script(TutorialKind::Accents);
        assert_eq!(a.count(EventKind::Accent), 6);
        assert_eq!(a.count(EventKind::Beat), 24);
    }

    #[test]
    fn records_round_trip_and_validation() {
        let s = tutorial_script(TutorialKind::Notes);
        let text = s.to_records("tutorial:notes");
        let first = text.lines().next().unwrap();
        assert_eq!(first, r#"{"version":1,"duration":8.0,"source":"tutorial:notes"}"#);
        assert!(text.lines().nth(1).unwrap().contains(r#""pitch_class":0"#));
        let (header, back) = HapticScript::from_records(&text).unwrap();
        assert_eq!(header.source, "tutorial:notes");
        assert_eq!(back, s);
        let beat_line = r#"{"t":0.5,"kind":"beat","finger":"thumb","pitch_class":3,"intensity":1.0}"#;
        let bad = format!("{first}\n{beat_line}\n");
        assert_eq!(HapticScript::from_records(&bad).unwrap_err().code(), "MalformedScript");
    }

    #[test]
    fn analyze_silence_and_clicks() {
        let silent = AudioBuffer::new(vec![0.0; SR as usize * 2], SR);
        let s = analyze(&silent, &AnalysisParams::default()).unwrap();
        assert!(s.events.is_empty());
        assert_eq!(s.duration, 2.0);

        let grid: Vec<(f64, f64)> = (0..8).map(|i| (i as f64 * 0.5, 0.8)).collect();
        let s = analyze(&clicks(&grid, 4.0), &AnalysisParams::default()).unwrap();
        assert_eq!(s.count(EventKind::Beat), 8);
        assert!(s.events.windows(2).all(|w| w[0].t <= w[1].t));
        assert!(s.events.iter().all(|e| (0.0..=1.0).contains(&e.intensity) && e.t <= s.duration));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dominant_at(hz: f64) -> usize {
            let spec = stft(&AudioBuffer::new(sine(hz, 0.5, 0.5), SR), 16_384, 4096).unwrap();
            dominant(&chroma(&spec)[0])
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn parseval_holds_on_noise(
                samples in prop::collection::vec(-1.0f64..1.0, 2048..4096),
                log_n in 6u32..11,
            ) {
                let n = 1usize << log_n;
                let hop = n / 2;
                let buf = AudioBuffer::new(samples, SR);
                let spec = stft(&buf, n, hop).unwrap();
                let w = hann(n);
                for (t, frame) in spec.frames.iter().enumerate() {
                    let time: f64 = (0..n).map(|i| (buf.samples[t * hop + i] * w[i]).powi(2)).sum();
                    let inner: f64 = frame[1..n / 2].iter().map(|m| m * m).sum();
                    let freq = (frame[0].powi(2) + frame[n / 2].powi(2) + 2.0 * inner) / n as f64;
                    prop_assert!((time - freq).abs() <= 1e-6 * time.max(f64::MIN_POSITIVE));
                }
            }

            #[test]
            fn scripts_are_sorted_bounded_and_round_trip(
                raw in prop::collection::vec((0.0f64..1.0, 0u8..3, 0u8..12, -0.5f64..1.5), 0..40),
                duration in 0.1f64..30.0,
            ) {
                let (mut notes, mut beats, mut accents) = (vec![], vec![], vec![]);
                for &(frac, kind, pc, intensity) in &raw {
                    let t = frac * duration;
                    match kind {
                        0 => beats.push(HapticEvent::beat(t, intensity)),
                        1 => notes.push(HapticEvent::note(t, PitchClass::new(pc).unwrap(), intensity)),
                        _ => accents.push(HapticEvent::accent(t, intensity)),
                    }
                }
                let script = compile_script(&notes, &beats, &accents, duration).unwrap();
                prop_assert_eq!(script.events.len(), raw.len());
                prop_assert!(script.events.windows(2).all(|w| w[0].t <= w[1].t));
                prop_assert!(script.events.iter().all(|e| (0.0..=1.0).contains(&e.intensity)));
                let (_, back) = HapticScript::from_records(&script.to_records("p")).unwrap();
                prop_assert_eq!(back, script);
            }

            #[test]
            fn octave_up_keeps_the_class(midi in 45u8..=90) {
                let hz = 440.0 * 2f64.powf((midi as f64 - 69.0) / 12.0);
                prop_assert_eq!(dominant_at(hz), (midi % 12) as usize);
                prop_assert_eq!(dominant_at(2.0 * hz), dominant_at(hz));
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]

            #[test]
            fn constant_tempo_is_stable(bpm in 60.0f64..200.0, phase in 0.0f64..0.2) {
                let period = 60.0 / bpm;
                let times: Vec<(f64, f64)> = (0..)
                    .map(|i| (phase + i as f64 * period, 0.9))
                    .take_while(|&(t, _)| t < 5.5)
                    .collect();
                let beats = detect_beats(&beat_spec(&clicks(&times, 6.0)));
                prop_assert_eq!(beats.len(), times.len());
                let gaps: Vec<f64> = beats.windows(2).map(|w| w[1].t - w[0].t).collect();
                let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
                let sd = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64).sqrt();
                prop_assert!(sd <= 0.010, "sd {sd}");
            }
        }
    }
}
