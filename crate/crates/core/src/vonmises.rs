//! Von Mises (circular normal) sampling.

use core::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math;

/// Von Mises distribution on `(-pi, pi]` with mean `mu` and concentration `kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VonMises {
    mu: f64,
    kappa: f64,
    r: f64,
}

impl VonMises {
    pub fn new(mu: f64, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() || !mu.is_finite() {
            return Err(Error::input("von Mises needs finite mu and kappa > 0"));
        }
        // Best & Fisher (1979) envelope parameter
        let tau = 1.0 + math::sqrt(1.0 + 4.0 * kappa * kappa);
        let rho = (tau - math::sqrt(2.0 * tau)) / (2.0 * kappa);
        let r = (1.0 + rho * rho) / (2.0 * rho);
        Ok(VonMises { mu, kappa, r })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.kappa < 1e-6 {
            return wrap(self.mu + PI * (2.0 * rng.gen::<f64>() - 1.0));
        }
        loop {
            let u1: f64 = rng.gen();
            let u2: f64 = rng.gen();
            let u3: f64 = rng.gen();
            let z = math::cos(PI * u1);
            let f = (1.0 + self.r * z) / (self.r + z);
            let c = self.kappa * (self.r - f);
            if c * (2.0 - c) - u2 > 0.0 || math::ln(c / u2) + 1.0 - c >= 0.0 {
                let theta = if u3 > 0.5 { math::acos(f.clamp(-1.0, 1.0)) } else { -math::acos(f.clamp(-1.0, 1.0)) };
                return wrap(self.mu + theta);
            }
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn rejects_non_positive_kappa() {
        assert!(VonMises::new(0.0, 0.0).is_err());
        assert!(VonMises::new(0.0, -1.0).is_err());
    }

    #[test]
    fn mean_resultant_length_matches_bessel_ratio() {
        // E[cos x] = I1(k)/I0(k); for k = 2 that is 0.697775
        let vm = VonMises::new(0.0, 2.0).unwrap();
        let mut r = rng::seeded(3);
        let n = 200_000;
        let (mut c, mut s) = (0.0, 0.0);
        for _ in 0..n {
            let x = vm.sample(&mut r);
            assert!(x > -PI - 1e-12 && x <= PI + 1e-12);
            c += math::cos(x);
            s += math::sin(x);
        }
        assert!((c / n as f64 - 0.697775).abs() < 0.005, "{}", c / n as f64);
        assert!((s / n as f64).abs() < 0.005);
    }

    #[test]
    fn high_concentration_gives_small_angles() {
        let vm = VonMises::new(0.0, 1000.0).unwrap();
        let mut r = rng::seeded(9);
        let m: f64 = (0..10_000).map(|_| vm.sample(&mut r).abs()).sum::<f64>() / 10_000.0;
        // E|x| ~ sqrt(2 / (pi * kappa)) = 0.0252
        assert!((m - 0.0252).abs() < 0.002, "{m}");
    }
}
