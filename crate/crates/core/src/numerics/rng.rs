//! Portable pseudo-random streams.
//!
//! The generator is PCG-XSH-RR with 64-bit state and 32-bit output, seeded
//! with the reference `pcg32_srandom` procedure. Normal deviates come from the
//! Box–Muller transform applied to consecutive pairs of open-interval
//! uniforms. Every step is specified down to the bit so that the same
//! `(seed, stream)` yields the same sequence in any implementation.

const PCG_MULTIPLIER: u64 = 6_364_136_223_846_793_005;
const TWO_POW_MINUS_32: f64 = 1.0 / 4_294_967_296.0;

/// PCG-XSH-RR 64/32 generator.
#[derive(Debug, Clone)]
pub struct Pcg32 {
    state: u64,
    increment: u64,
}

impl Pcg32 {
    /// Seeds the generator on the given stream (`pcg32_srandom(seed, stream)`).
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = Pcg32 {
            state: 0,
            increment: (stream << 1) | 1,
        };
        rng.step();
        rng.state = rng.state.wrapping_add(seed);
        rng.step();
        rng
    }

    fn step(&mut self) {
        self.state = self
            .state
            .wrapping_mul(PCG_MULTIPLIER)
            .wrapping_add(self.increment);
    }

    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.step();
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    /// Uniform deviate in the open interval (0, 1): `(u32 + 0.5) / 2^32`.
    pub fn next_open_unit(&mut self) -> f64 {
        (f64::from(self.next_u32()) + 0.5) * TWO_POW_MINUS_32
    }
}

/// Standard normal deviates drawn in Box–Muller pairs.
///
/// The cosine branch is emitted first and the sine branch is held for the
/// next call, so a stream of length `2n` consumes exactly `2n` uniforms.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: Pcg32,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        GaussianStream {
            rng: Pcg32::new(seed, stream),
            spare: None,
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.rng.next_open_unit();
        let u2 = self.rng.next_open_unit();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}
