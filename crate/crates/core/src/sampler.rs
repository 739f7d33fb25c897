//! Wigner vacuum initial conditions and complex white-noise increments.
//!
//! Every trajectory draws from its own ChaCha8 stream, keyed by the master
//! seed and selected by the trajectory index through the cipher's stream
//! counter. Streams are therefore independent of how trajectories are
//! distributed across workers.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{TrajectoryState, C64};

pub type TrajectoryRng = ChaCha8Rng;

/// Identifies the random stream of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub trajectory_index: u64,
}

impl SeedSpec {
    pub const fn new(master_seed: u64, trajectory_index: u64) -> Self {
        SeedSpec {
            master_seed,
            trajectory_index,
        }
    }
}

pub fn stream_for(seed: SeedSpec) -> TrajectoryRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.master_seed);
    rng.set_stream(seed.trajectory_index);
    rng
}

#[inline]
fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im)
}

/// Independent Wigner vacua in both wells: variance 1/4 per real component.
pub fn sample_vacuum<R: Rng + ?Sized>(rng: &mut R) -> TrajectoryState {
    let alpha1 = complex_normal(rng) * 0.5;
    let alpha2 = complex_normal(rng) * 0.5;
    TrajectoryState::new(alpha1, alpha2)
}

/// Additive noise for one Euler step on the damped well.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseIncrement {
    pub dw: C64,
}

/// Pre-scaled generator of [`NoiseIncrement`]s, `E[|dw|²] = γ dt`.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSource {
    scale: f64,
}

impl NoiseSource {
    pub fn new(dt: f64, gamma: f64) -> Self {
        NoiseSource {
            scale: (gamma * dt * 0.5).sqrt(),
        }
    }

    /// Multiplies the noise amplitude; used to check that validation is sensitive to it.
    pub fn scaled(self, factor: f64) -> Self {
        NoiseSource {
            scale: self.scale * factor,
        }
    }

    pub fn is_silent(&self) -> bool {
        self.scale == 0.0
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseIncrement {
        if self.scale == 0.0 {
            return NoiseIncrement::default();
        }
        NoiseIncrement {
            dw: complex_normal(rng) * self.scale,
        }
    }
}

pub fn noise_increment<R: Rng + ?Sized>(rng: &mut R, dt: f64, gamma: f64) -> NoiseIncrement {
    NoiseSource::new(dt, gamma).draw(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    /// Running mean and variance of a sample.
    #[derive(Default)]
    struct Stats {
        n: f64,
        sum: f64,
        sum_sq: f64,
    }

    impl Stats {
        fn push(&mut self, x: f64) {
            self.n += 1.0;
            self.sum += x;
            self.sum_sq += x * x;
        }
        fn mean(&self) -> f64 {
            self.sum / self.n
        }
        fn var(&self) -> f64 {
            self.sum_sq / self.n - self.mean().powi(2)
        }
        fn sem(&self) -> f64 {
            (self.var() / self.n).sqrt()
        }
        fn within(&self, target: f64, sigmas: f64) -> bool {
            (self.mean() - target).abs() <= sigmas * self.sem()
        }
    }

    #[test]
    fn vacuum_moments() {
        let mut rng = stream_for(SeedSpec::new(7, 0));
        let (mut n1, mut n2) = (Stats::default(), Stats::default());
        let (mut re, mut im) = (Stats::default(), Stats::default());
        let (mut sq_re, mut sq_im) = (Stats::default(), Stats::default());
        for _ in 0..1_000_000 {
            let s = sample_vacuum(&mut rng);
            n1.push(s.alpha1.norm_sqr());
            n2.push(s.alpha2.norm_sqr());
            re.push(s.alpha1.re);
            im.push(s.alpha2.im);
            let sq = s.alpha1 * s.alpha1;
            sq_re.push(sq.re);
            sq_im.push(sq.im);
        }
        assert!(n1.within(0.5, 3.0), "mean |a1|^2 = {}", n1.mean());
        assert!(n2.within(0.5, 3.0), "mean |a2|^2 = {}", n2.mean());
        assert!(re.within(0.0, 3.0));
        assert!(im.within(0.0, 3.0));
        assert!(sq_re.within(0.0, 3.0));
        assert!(sq_im.within(0.0, 3.0));
    }

    #[test]
    fn vacuum_is_circularly_symmetric() {
        let mut rng = stream_for(SeedSpec::new(11, 3));
        let samples: Vec<C64> = (0..400_000)
            .map(|_| sample_vacuum(&mut rng).alpha1)
            .collect();
        for k in 0..6 {
            let u = C64::from_polar(1.0, 0.55 * k as f64);
            let mut proj = Stats::default();
            let mut second = Stats::default();
            for z in &samples {
                let r = z * u;
                proj.push(r.re);
                second.push((r * r).re);
            }
            // Var(Re) = 1/4 for any phase, so E[Re(r²)] stays zero.
            assert!((proj.var() - 0.25).abs() < 4.0 * 0.25 * (2.0 / proj.n).sqrt());
            assert!(second.within(0.0, 4.0));
        }
    }

    #[test]
    fn silent_noise_is_exactly_zero() {
        let mut rng = stream_for(SeedSpec::new(1, 0));
        for _ in 0..100 {
            assert_eq!(noise_increment(&mut rng, 1e-3, 0.0).dw, C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn noise_moments() {
        let dt = 1e-3;
        let source = NoiseSource::new(dt, 1.0);
        let mut rng = stream_for(SeedSpec::new(5, 9));
        let (mut power, mut sq_re, mut sq_im) =
            (Stats::default(), Stats::default(), Stats::default());
        let (mut mean_re, mut lag) = (Stats::default(), Stats::default());
        let mut prev = source.draw(&mut rng).dw;
        for _ in 0..1_000_000 {
            let dw = source.draw(&mut rng).dw;
            power.push(dw.norm_sqr());
            let sq = dw * dw;
            sq_re.push(sq.re);
            sq_im.push(sq.im);
            mean_re.push(dw.re);
            lag.push((prev.conj() * dw).re);
            prev = dw;
        }
        assert!(power.within(dt, 3.0), "E|dw|^2 = {}", power.mean());
        assert!(sq_re.within(0.0, 3.0));
        assert!(sq_im.within(0.0, 3.0));
        assert!(mean_re.within(0.0, 3.0));
        assert!(lag.within(0.0, 3.0), "lag-1 correlation {}", lag.mean());
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let mut a = stream_for(SeedSpec::new(42, 0));
        let mut b = stream_for(SeedSpec::new(42, 0));
        let mut c = stream_for(SeedSpec::new(42, 1));
        let xa: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..64).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        let mut d = stream_for(SeedSpec::new(43, 0));
        assert_ne!(d.next_u64(), xa[0]);
    }

    #[test]
    fn first_draws_across_streams_are_standard_normal() {
        let mut stats = Stats::default();
        for k in 0..10_000 {
            let mut rng = stream_for(SeedSpec::new(42, k));
            let x: f64 = rng.sample(StandardNormal);
            stats.push(x);
        }
        assert!(stats.within(0.0, 3.0));
        // Sample variance of n normals has standard deviation sqrt(2/n).
        assert!((stats.var() - 1.0).abs() < 3.0 * (2.0 / stats.n).sqrt());
    }
}
