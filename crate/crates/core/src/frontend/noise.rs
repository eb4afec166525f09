use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::features::{AudioClip, FeatureSequence, LOG_FLOOR, NUM_MEL_BINS};
use crate::error::{Error, Result};

/// Values that can be corrupted with additive white Gaussian noise at a target SNR.
pub trait AddNoise: Sized {
    fn add_noise(&self, snr_db: f64, seed: u64) -> Result<Self>;
}

fn noise_sigma(signal_power: f64, snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::input("frontend", "SNR must be finite"));
    }
    if !(signal_power > 0.0) {
        return Err(Error::input("frontend", "cannot set an SNR for a zero-power signal"));
    }
    Ok((signal_power / 10f64.powf(snr_db / 10.0)).sqrt())
}

impl AddNoise for AudioClip {
    /// Noise power is `signal_power / 10^(snr_db/10)`; output is clamped to [-1, 1].
    fn add_noise(&self, snr_db: f64, seed: u64) -> Result<Self> {
        let s = self.samples();
        let power = s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64;
        let sigma = noise_sigma(power, snr_db)?;
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = s
            .iter()
            .map(|x| (x + normal.sample(&mut rng)).clamp(-1.0, 1.0))
            .collect();
        AudioClip::new(out, self.sample_rate_hz())
    }
}

impl AddNoise for FeatureSequence {
    /// Feature-domain stand-in: signal power is the per-bin variance around the
    /// utterance mean, so constant offsets do not count as signal.
    fn add_noise(&self, snr_db: f64, seed: u64) -> Result<Self> {
        let t = self.num_frames() as f64;
        let mut mean = [0.0; NUM_MEL_BINS];
        for fr in self.frames() {
            mean.iter_mut().zip(fr).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= t);
        let scale = self.data().iter().map(|x| x * x).sum::<f64>() / self.data().len() as f64;
        let power = self
            .frames()
            .flat_map(|fr| fr.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)))
            .sum::<f64>()
            / self.data().len() as f64;
        // Rounding residue on a constant sequence is not signal.
        let power = if power <= scale * 1e-24 { 0.0 } else { power };
        let sigma = noise_sigma(power, snr_db)?;
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = self
            .data()
            .iter()
            .map(|x| (x + normal.sample(&mut rng)).max(LOG_FLOOR))
            .collect();
        FeatureSequence::new(out, self.frame_hop_ms())
    }
}

/// Adds white Gaussian noise at `snr_db`, deterministically from `seed`.
pub fn add_noise<T: AddNoise>(x: &T, snr_db: f64, seed: u64) -> Result<T> {
    x.add_noise(snr_db, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn tone() -> AudioClip {
        let s = (0..16000)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
            .collect();
        AudioClip::new(s, 16000).unwrap()
    }

    #[test]
    fn high_snr_is_nearly_transparent() {
        let c = tone();
        let n = add_noise(&c, 60.0, 1).unwrap();
        let ratio = rms(n.samples()) / rms(c.samples());
        assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn zero_db_noise_matches_signal_rms() {
        let c = tone();
        let n = add_noise(&c, 0.0, 2).unwrap();
        let diff: Vec<f64> = n.samples().iter().zip(c.samples()).map(|(a, b)| a - b).collect();
        let ratio = rms(&diff) / rms(c.samples());
        assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn snr_is_met_across_the_mtr_range() {
        let c = tone();
        for snr in [3.0, 9.0, 15.0] {
            let n = add_noise(&c, snr, 5).unwrap();
            let diff: Vec<f64> = n.samples().iter().zip(c.samples()).map(|(a, b)| a - b).collect();
            let want = rms(c.samples()) / 10f64.powf(snr / 20.0);
            assert!((rms(&diff) / want - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn same_seed_same_noise() {
        let c = tone();
        assert_eq!(add_noise(&c, 5.0, 9).unwrap(), add_noise(&c, 5.0, 9).unwrap());
        assert_ne!(add_noise(&c, 5.0, 9).unwrap(), add_noise(&c, 5.0, 10).unwrap());
    }

    #[test]
    fn silent_or_nonfinite_inputs_fail() {
        let z = AudioClip::new(vec![0.0; 1000], 16000).unwrap();
        assert!(matches!(add_noise(&z, 10.0, 0), Err(Error::Input { .. })));
        assert!(add_noise(&tone(), f64::INFINITY, 0).is_err());
        let flat = FeatureSequence::new(vec![1.0; 400], 10).unwrap();
        assert!(add_noise(&flat, 10.0, 0).is_err());
    }

    #[test]
    fn feature_noise_respects_floor_and_determinism() {
        let data: Vec<f64> = (0..400).map(|i| LOG_FLOOR + (i % 7) as f64 * 0.1).collect();
        let f = FeatureSequence::new(data, 10).unwrap();
        let n = add_noise(&f, 3.0, 4).unwrap();
        assert!(n.data().iter().all(|v| *v >= LOG_FLOOR));
        assert_eq!(n, add_noise(&f, 3.0, 4).unwrap());
    }
}
