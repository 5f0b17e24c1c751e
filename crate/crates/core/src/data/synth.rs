//! Synthetic series with a known trend / seasonal / noise split.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::SeriesFrame;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrendSpec {
    pub slope: f64,
    pub intercept: f64,
    pub quadratic: f64,
}

/// `amplitude · sin(2πt / period + phase)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub m: usize,
    /// One entry per variable.
    pub trend: Vec<TrendSpec>,
    /// Sinusoids per variable.
    pub seasonal: Vec<Vec<Sinusoid>>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config { key: key.into(), msg });
        if self.n == 0 || self.m == 0 {
            return bad("n", format!("need n > 0 and m > 0, got n = {}, m = {}", self.n, self.m));
        }
        if self.trend.len() != self.m {
            return bad("trend", format!("{} entries for {} variables", self.trend.len(), self.m));
        }
        if self.seasonal.len() != self.m {
            return bad("seasonal", format!("{} entries for {} variables", self.seasonal.len(), self.m));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std", format!("must be finite and >= 0, got {}", self.noise_std));
        }
        for s in self.seasonal.iter().flatten() {
            if !(s.period > 1.0 && s.period.is_finite()) {
                return bad("period", format!("periods must exceed 1, got {}", s.period));
            }
            if !(s.amplitude.is_finite() && s.phase.is_finite()) {
                return bad("seasonal", "amplitude and phase must be finite".into());
            }
        }
        for t in &self.trend {
            if ![t.slope, t.intercept, t.quadratic].iter().all(|v| v.is_finite()) {
                return bad("trend", "coefficients must be finite".into());
            }
        }
        Ok(())
    }
}

/// Frame plus its `[trend, seasonal, noise]` addends.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub frame: SeriesFrame,
    pub components: [SeriesFrame; 3],
}

/// Each value is `(trend + seasonal) + noise`, evaluated in that order, so
/// adding the returned components the same way reproduces it bit for bit.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let (n, m) = (spec.n, spec.m);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut trend = Vec::with_capacity(n * m);
    let mut seasonal = Vec::with_capacity(n * m);
    let mut noise = Vec::with_capacity(n * m);
    let mut values = Vec::with_capacity(n * m);
    for t in 0..n {
        let x = t as f64;
        for j in 0..m {
            let tr = spec.trend[j];
            let a = tr.slope * x + tr.intercept + tr.quadratic * x * x;
            let s: f64 = spec.seasonal[j]
                .iter()
                .map(|s| s.amplitude * (std::f64::consts::TAU * x / s.period + s.phase).sin())
                .sum();
            let e = if spec.noise_std > 0.0 {
                spec.noise_std * normal.sample(&mut rng)
            } else {
                0.0
            };
            trend.push(a);
            seasonal.push(s);
            noise.push(e);
            values.push((a + s) + e);
        }
    }
    let names: Vec<String> = (0..m).map(|j| format!("x{j}")).collect();
    let timestamps: Vec<String> = (0..n).map(|t| t.to_string()).collect();
    let make = |v: Vec<f64>| -> Result<SeriesFrame> {
        let mut f = SeriesFrame::new(names.clone(), Some(timestamps.clone()), v)?;
        f.index_name = "t".into();
        Ok(f)
    };
    Ok(SynthOutput {
        frame: make(values)?,
        components: [make(trend)?, make(seasonal)?, make(noise)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(trend: TrendSpec, seasonal: Vec<Sinusoid>, noise_std: f64) -> SynthSpec {
        SynthSpec {
            n: 8,
            m: 1,
            trend: vec![trend],
            seasonal: vec![seasonal],
            noise_std,
            seed: 7,
        }
    }

    #[test]
    fn linear_trend_counts_up() {
        let s = spec(TrendSpec { slope: 1.0, ..Default::default() }, vec![], 0.0);
        let out = synth_generate(&s).unwrap();
        assert_eq!(out.frame.values(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn quarter_period_sinusoid() {
        let wave = Sinusoid {
            amplitude: 1.0,
            period: 4.0,
            phase: 0.0,
        };
        let out = synth_generate(&spec(TrendSpec::default(), vec![wave], 0.0)).unwrap();
        let expect = [0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0];
        for (v, e) in out.frame.values().iter().zip(expect) {
            assert!((v - e).abs() < 1e-14, "{v} vs {e}");
        }
    }

    #[test]
    fn components_sum_exactly_and_seed_repeats() {
        let wave = Sinusoid {
            amplitude: 0.7,
            period: 5.5,
            phase: 0.3,
        };
        let trend = TrendSpec {
            slope: 0.01,
            intercept: -2.0,
            quadratic: 1e-4,
        };
        let s = spec(trend, vec![wave], 0.25);
        let a = synth_generate(&s).unwrap();
        let [tr, se, no] = &a.components;
        for i in 0..a.frame.values().len() {
            let sum = (tr.values()[i] + se.values()[i]) + no.values()[i];
            assert_eq!(sum.to_bits(), a.frame.values()[i].to_bits());
        }
        let b = synth_generate(&s).unwrap();
        assert_eq!(a.frame, b.frame);
    }

    #[test]
    fn rejects_degenerate_period_and_negative_noise() {
        let wave = Sinusoid {
            amplitude: 1.0,
            period: 1.0,
            phase: 0.0,
        };
        assert!(synth_generate(&spec(TrendSpec::default(), vec![wave], 0.0)).is_err());
        assert!(synth_generate(&spec(TrendSpec::default(), vec![], -0.1)).is_err());
    }
}
