//! The jointly trained parameter set: encoder plus the SN and AP heads.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsync_nn::{ModelParams, Tensor2};

use crate::policies::{ApInput, PolicyHead, SnInput, HIDDEN};
use crate::semantics::{Encoder, EncoderConfig, SemanticVector};
use crate::Result;

pub const SN_HEAD_PREFIX: &str = "sn";
pub const AP_HEAD_PREFIX: &str = "ap";

/// Layer layout; the numbers live in a separate [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Architecture {
    pub encoder: Encoder,
    pub sn_head: PolicyHead,
    pub ap_head: PolicyHead,
}

#[derive(Debug, Clone)]
pub struct LearnedModel {
    pub params: ModelParams,
    pub arch: Architecture,
}

impl LearnedModel {
    pub fn new<R: Rng + ?Sized>(cfg: EncoderConfig, rng: &mut R) -> Result<Self> {
        Self::with_hidden(cfg, HIDDEN, rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(cfg: EncoderConfig, hidden: usize, rng: &mut R) -> Result<Self> {
        let mut params = ModelParams::new();
        let encoder = Encoder::new(&mut params, cfg, rng)?;
        let sn_head = PolicyHead::with_hidden(&mut params, SN_HEAD_PREFIX, SnInput::dim(cfg.d_sem), hidden, rng)?;
        let ap_head = PolicyHead::with_hidden(&mut params, AP_HEAD_PREFIX, ApInput::dim(cfg.d_sem), hidden, rng)?;
        Ok(Self {
            params,
            arch: Architecture {
                encoder,
                sn_head,
                ap_head,
            },
        })
    }

    pub fn d_sem(&self) -> usize {
        self.arch.encoder.cfg.d_sem
    }

    pub fn encode(&self, window: &Tensor2) -> Result<SemanticVector> {
        self.arch.encoder.encode(&self.params, window)
    }

    pub fn p_up(&self, s: &SnInput) -> Result<f64> {
        self.arch.sn_head.prob(&self.params, &s.to_vec())
    }

    pub fn p_loc(&self, s: &ApInput) -> Result<f64> {
        self.arch.ap_head.prob(&self.params, &s.to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        self.params.save(f)?;
        Ok(())
    }

    /// Builds the architecture for `cfg` and overwrites it with the stored
    /// parameters; names and shapes must match exactly.
    pub fn load(path: &Path, cfg: EncoderConfig) -> Result<Self> {
        // initial values are overwritten, the seed only fixes the layout pass
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = Self::new(cfg, &mut rng)?;
        m.params.load_from(BufReader::new(File::open(path)?))?;
        Ok(m)
    }
}
