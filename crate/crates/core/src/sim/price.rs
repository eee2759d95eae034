//! Seeded geometric random walk with symmetric log-jumps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::scenario::PriceParams;

#[derive(Clone, Debug)]
pub struct PriceProcess {
    params: PriceParams,
    log_price: f64,
    rng: ChaCha8Rng,
}

impl PriceProcess {
    /// `stream` separates processes sharing a seed.
    pub fn new(params: PriceParams, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            log_price: params.initial.ln(),
            params,
            rng,
        }
    }

    pub fn price(&self) -> f64 {
        self.log_price.exp()
    }

    /// One tick. Always draws the same three variates so the stream stays
    /// aligned whatever the parameters.
    pub fn step(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        let u: f64 = self.rng.random();
        let up: bool = self.rng.random();
        let p = &self.params;
        self.log_price += p.drift - 0.5 * p.volatility * p.volatility + p.volatility * z;
        if u < p.jump_prob {
            self.log_price += if up { p.jump_size } else { -p.jump_size };
        }
        self.price()
    }
}
