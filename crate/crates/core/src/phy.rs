//! Gray-mapped QPSK and 16QAM over an AWGN channel.
//!
//! SNR is Es/N0 per complex symbol. Constellations have unit average
//! energy, so the noise variance per real dimension is `N0 / 2` with
//! `N0 = 10^(-snr_db / 10)`. Demodulation is hard-decision minimum
//! distance; exact boundary ties resolve to the lexicographically smaller
//! bit pattern.

use num_complex::Complex64;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::codec::BitStream;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "QPSK", alias = "qpsk")]
    Qpsk,
    #[serde(rename = "16QAM", alias = "qam16", alias = "16qam")]
    Qam16,
}

impl Modulation {
    pub const ALL: [Modulation; 2] = [Modulation::Qpsk, Modulation::Qam16];

    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
        }
    }

    /// Stable index used for seed derivation.
    pub fn index(self) -> u64 {
        match self {
            Modulation::Qpsk => 0,
            Modulation::Qam16 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Qpsk => "QPSK",
            Modulation::Qam16 => "16QAM",
        }
    }

    /// Every constellation point, indexed by its bit pattern read MSB-first.
    pub fn constellation(self) -> Vec<Complex64> {
        let n = 1u32 << self.bits_per_symbol();
        (0..n).map(|v| self.map_symbol(v)).collect()
    }

    fn map_symbol(self, v: u32) -> Complex64 {
        match self {
            Modulation::Qpsk => {
                let axis = |b: u32| if b == 0 { 1.0 } else { -1.0 };
                Complex64::new(axis(v >> 1), axis(v & 1)) * std::f64::consts::FRAC_1_SQRT_2
            }
            Modulation::Qam16 => {
                Complex64::new(pam4_level(v >> 2), pam4_level(v & 3)) / 10f64.sqrt()
            }
        }
    }
}

impl std::fmt::Display for Modulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Gray-coded 4-PAM amplitude: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
fn pam4_level(pair: u32) -> f64 {
    match pair {
        0b00 => -3.0,
        0b01 => -1.0,
        0b11 => 1.0,
        _ => 3.0,
    }
}

/// Slicer for one 4-PAM axis in unnormalized units.
fn pam4_decide(x: f64) -> u32 {
    if x <= -2.0 {
        0b00
    } else if x <= 0.0 {
        0b01
    } else if x < 2.0 {
        0b11
    } else {
        0b10
    }
}

/// Description of the simulated link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub modulation: Modulation,
    /// Es/N0 in dB.
    pub snr_db: f64,
    pub seed: u64,
}

/// Baseband symbols plus the number of payload bits they carry.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    pub symbols: Vec<Complex64>,
    pub bit_count: usize,
}

/// Gray-maps bits onto symbols, zero-padding the final symbol.
pub fn modulate(bits: &BitStream, modulation: Modulation) -> SymbolBlock {
    let k = modulation.bits_per_symbol();
    let table = modulation.constellation();
    let n = bits.len().div_ceil(k);
    let symbols = (0..n)
        .map(|s| {
            let v = (0..k).fold(0u32, |acc, j| {
                let i = s * k + j;
                (acc << 1) | (i < bits.len() && bits.get(i)) as u32
            });
            table[v as usize]
        })
        .collect();
    SymbolBlock {
        symbols,
        bit_count: bits.len(),
    }
}

/// Standard normal pairs from two uniforms in `(0, 1]` via Box-Muller.
fn gaussian_pair(rng: &mut impl RngCore) -> (f64, f64) {
    let uniform =
        |r: &mut dyn RngCore| ((r.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
    let u1 = uniform(rng);
    let u2 = uniform(rng);
    let radius = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (radius * theta.cos(), radius * theta.sin())
}

/// Noise standard deviation per real dimension at the given Es/N0.
pub fn noise_sigma(snr_db: f64) -> f64 {
    let n0 = 10f64.powf(-snr_db / 10.0);
    (n0 / 2.0).sqrt()
}

/// Adds circular Gaussian noise with variance `N0/2` per dimension.
pub fn apply_awgn(block: &SymbolBlock, snr_db: f64, rng: &mut impl RngCore) -> SymbolBlock {
    let sigma = noise_sigma(snr_db);
    let symbols = block
        .symbols
        .iter()
        .map(|&s| {
            let (re, im) = gaussian_pair(rng);
            s + Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    SymbolBlock {
        symbols,
        bit_count: block.bit_count,
    }
}

/// Hard-decision minimum-distance demodulation; drops padding bits.
pub fn demodulate(block: &SymbolBlock, modulation: Modulation) -> BitStream {
    let mut out = BitStream::with_capacity(block.bit_count);
    for s in &block.symbols {
        let v = match modulation {
            // Bit 0 maps to the positive half-axis; 0 itself decides as 0.
            Modulation::Qpsk => (((s.re < 0.0) as u32) << 1) | (s.im < 0.0) as u32,
            Modulation::Qam16 => {
                let scale = 10f64.sqrt();
                (pam4_decide(s.re * scale) << 2) | pam4_decide(s.im * scale)
            }
        };
        out.push_bits(v, modulation.bits_per_symbol() as u32);
    }
    out.truncate(block.bit_count);
    out
}

/// Gaussian tail probability `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Closed-form bit error rate at Es/N0 `snr_db`. 16QAM uses the
/// nearest-neighbour Gray approximation `(3/4) Q(sqrt(Es/(5 N0)))`.
pub fn ber_theoretical(modulation: Modulation, snr_db: f64) -> f64 {
    let es_n0 = 10f64.powf(snr_db / 10.0);
    match modulation {
        Modulation::Qpsk => {
            let eb_n0 = es_n0 / 2.0;
            q_function((2.0 * eb_n0).sqrt())
        }
        Modulation::Qam16 => 0.75 * q_function((0.2 * es_n0).sqrt()),
    }
}

/// Modulate, add noise, demodulate. Pure in `(bits, channel)`.
pub fn transmit(bits: &BitStream, channel: &ChannelConfig) -> BitStream {
    let mut rng = seed::substream(channel.seed, &[]);
    transmit_with(bits, channel.modulation, channel.snr_db, &mut rng)
}

/// [`transmit`] drawing noise from a caller-supplied generator.
pub fn transmit_with(
    bits: &BitStream,
    modulation: Modulation,
    snr_db: f64,
    rng: &mut impl RngCore,
) -> BitStream {
    let tx = modulate(bits, modulation);
    let rx = apply_awgn(&tx, snr_db, rng);
    demodulate(&rx, modulation)
}
