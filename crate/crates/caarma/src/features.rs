//! Waveform front end: log-mel filterbank extraction, fixed-length segment
//! sampling, and a procedural corpus generator that produces distinguishable
//! synthetic "speakers" for desk-scale experiments.

use crate::config::ExperimentConfig;
use crate::data::{Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::par::maybe_par_map;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use std::path::Path;

pub const N_FFT: usize = 512;
pub const LOG_FLOOR: f64 = 1e-10;
pub const MEL_LOW_HZ: f64 = 20.0;
pub const MEL_HIGH_HZ: f64 = 7600.0;

/// Log-mel filterbank energies, [T x n_mels].
#[derive(Clone, Debug)]
pub struct FbankMatrix {
    pub frames: Tensor,
    pub frame_rate: f64,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters as a [n_bins x n_mels] matrix over FFT bins.
fn mel_filterbank(n_mels: usize, sample_rate: u32) -> Tensor {
    let n_bins = N_FFT / 2 + 1;
    let mel_lo = hz_to_mel(MEL_LOW_HZ);
    let mel_hi = hz_to_mel(MEL_HIGH_HZ);
    let centers: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / N_FFT as f64;
    let mut fb = Tensor::zeros(n_bins, n_mels);
    for m in 0..n_mels {
        let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f >= lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f <= hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb.data[k * n_mels + m] = w;
        }
    }
    fb
}

fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Frame count for a waveform of `len` samples: 1 + floor((len - window) / hop).
pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    1 + (len - window) / hop
}

pub fn extract_fbank(waveform: &[f64], cfg: &ExperimentConfig) -> Result<FbankMatrix> {
    let window = cfg.window_samples();
    let hop = cfg.hop_samples();
    if waveform.len() < window {
        return Err(Error::TooShort {
            got: waveform.len(),
            need: window,
        });
    }
    let n_frames = frame_count(waveform.len(), window, hop);
    let win = hamming(window);
    let fb = mel_filterbank(cfg.fbank_dims, cfg.sample_rate);
    let n_bins = N_FFT / 2 + 1;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(N_FFT);
    let mut frames = Tensor::zeros(n_frames, cfg.fbank_dims);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut power = vec![0.0f64; n_bins];
    for t in 0..n_frames {
        let start = t * hop;
        for i in 0..N_FFT {
            buf[i] = if i < window {
                Complex::new(waveform[start + i] * win[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for m in 0..cfg.fbank_dims {
            let mut e = 0.0;
            for k in 0..n_bins {
                e += power[k] * fb.data[k * cfg.fbank_dims + m];
            }
            frames.data[t * cfg.fbank_dims + m] = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(FbankMatrix {
        frames,
        frame_rate: cfg.sample_rate as f64 / hop as f64,
    })
}

/// Filterbanks for a whole batch of waveforms; data-parallel across items.
pub fn extract_fbank_batch(waveforms: &[Vec<f64>], cfg: &ExperimentConfig) -> Result<Vec<FbankMatrix>> {
    maybe_par_map(waveforms, |w| extract_fbank(w, cfg))
        .into_iter()
        .collect()
}

/// Draw a fixed-length training segment. Longer inputs get a random offset;
/// shorter inputs are wrap-padded from offset zero.
pub fn random_segment(waveform: &[f64], cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let seg = cfg.segment_samples();
    if waveform.len() >= seg {
        let offset = rng.gen_range(0..=waveform.len() - seg);
        waveform[offset..offset + seg].to_vec()
    } else {
        (0..seg).map(|i| waveform[i % waveform.len()]).collect()
    }
}

/// Harmonic-source parameters for one synthetic speaker.
#[derive(Clone, Debug)]
pub struct SyntheticSpeakerSpec {
    pub speaker_id: usize,
    pub fundamental_hz: f64,
    pub formant_hz: Vec<f64>,
    pub jitter: f64,
}

impl SyntheticSpeakerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fundamental_hz <= 0.0 {
            return Err(Error::Degenerate("fundamental_hz must be positive".into()));
        }
        if self.formant_hz.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Degenerate("formants must be strictly increasing".into()));
        }
        Ok(())
    }
}

pub fn speaker_spec(speaker_id: usize, seed: u64) -> SyntheticSpeakerSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5350_0000 + speaker_id as u64);
    let fundamental_hz = 90.0 * 2f64.powf(rng.gen_range(0.0..1.55));
    let f1 = rng.gen_range(350.0..900.0);
    let f2 = rng.gen_range(1100.0..2300.0);
    let f3 = rng.gen_range(2400.0..3400.0);
    SyntheticSpeakerSpec {
        speaker_id,
        fundamental_hz,
        formant_hz: vec![f1, f2, f3],
        jitter: rng.gen_range(0.01..0.04),
    }
}

fn formant_gain(freq: f64, formants: &[f64]) -> f64 {
    let bw = 160.0;
    let mut g = 0.05; // spectral tilt floor
    for &f in formants {
        let d = (freq - f) / bw;
        g += 1.0 / (1.0 + d * d);
    }
    g
}

/// Synthesize one utterance for a speaker: jittered harmonic source shaped by
/// the speaker's formants, with an amplitude envelope and additive noise.
pub fn synthesize_utterance(
    spec: &SyntheticSpeakerSpec,
    utt_index: usize,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5554_0000_0000 + ((spec.speaker_id as u64) << 20) + utt_index as u64);
    let sr = cfg.sample_rate as f64;
    let dur_s = rng.gen_range(3.2..4.2);
    let n = (dur_s * sr) as usize;

    // per-utterance deviations keep same-speaker utterances non-identical
    let f0_base = spec.fundamental_hz * (1.0 + rng.gen_range(-0.04..0.04));
    let vib_rate = rng.gen_range(3.0..7.0);
    let vib_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let env_rate = rng.gen_range(2.0..5.0);
    let env_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let noise_level = rng.gen_range(0.02..0.06);

    let nyquist = sr / 2.0;
    let n_harm = ((nyquist * 0.9) / f0_base).floor().min(28.0) as usize;
    let amps: Vec<f64> = (1..=n_harm)
        .map(|h| formant_gain(h as f64 * f0_base, &spec.formant_hz) / h as f64)
        .collect();
    let harm_phases: Vec<f64> = (0..n_harm)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();

    let mut out = vec![0.0f64; n];
    let mut phase = 0.0f64;
    let mut drift = 0.0f64;
    for (i, sample) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        drift += rng.gen_range(-1.0..1.0) * 1e-4;
        drift = drift.clamp(-0.05, 0.05);
        let f0 = f0_base
            * (1.0 + spec.jitter * (std::f64::consts::TAU * vib_rate * t + vib_phase).sin() + drift);
        phase += std::f64::consts::TAU * f0 / sr;
        let mut v = 0.0;
        for h in 0..n_harm {
            v += amps[h] * ((h + 1) as f64 * phase + harm_phases[h]).sin();
        }
        let env = 0.55 + 0.45 * (std::f64::consts::TAU * env_rate * t + env_phase).sin().abs();
        *sample = v * env + noise_level * rng.gen_range(-1.0..1.0);
    }
    let peak = out.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let gain = 0.7 / peak.max(1e-9);
    for v in &mut out {
        *v *= gain;
    }
    out
}

pub fn write_wav(path: &Path, waveform: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| Error::Wav(e.to_string()))?;
    for &v in waveform {
        let s = (v.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(s).map_err(|e| Error::Wav(e.to_string()))?;
    }
    writer.finalize().map_err(|e| Error::Wav(e.to_string()))?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::Wav(e.to_string()))?;
    let samples: std::result::Result<Vec<i16>, _> = reader.samples::<i16>().collect();
    let samples = samples.map_err(|e| Error::Wav(e.to_string()))?;
    Ok(samples.iter().map(|&s| s as f64 / 32768.0).collect())
}

/// Generate a corpus of `n_speakers * utts_per_speaker` WAV files under
/// `out_dir` and return the manifest. Identical seeds give bit-identical
/// corpora.
pub fn generate_corpus(
    n_speakers: usize,
    utts_per_speaker: usize,
    cfg: &ExperimentConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    if n_speakers < 2 {
        return Err(Error::Degenerate("need at least 2 speakers".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let jobs: Vec<(usize, usize)> = (0..n_speakers)
        .flat_map(|s| (0..utts_per_speaker).map(move |u| (s, u)))
        .collect();
    let results = maybe_par_map(&jobs, |&(s, u)| -> Result<ManifestEntry> {
        let spec = speaker_spec(s, seed);
        let wave = synthesize_utterance(&spec, u, cfg, seed);
        let utt_id = format!("spk{s:04}_utt{u:04}");
        let path = out_dir.join(format!("{utt_id}.wav"));
        write_wav(&path, &wave, cfg.sample_rate)?;
        Ok(ManifestEntry {
            utterance_id: utt_id,
            speaker_label: format!("spk{s:04}"),
            source: path.to_string_lossy().into_owned(),
        })
    });
    let entries: Result<Vec<ManifestEntry>> = results.into_iter().collect();
    let manifest = Manifest { entries: entries? };
    manifest.save(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}
