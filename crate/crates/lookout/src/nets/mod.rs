//! Trainable networks on top of candle.

pub mod arch;
pub mod blocks;
pub mod layers;
pub mod params;

use std::fmt;
use std::str::FromStr;

use candle_core::DType;
use serde::{Deserialize, Serialize};

pub use arch::{Architecture, Profile};
pub use blocks::{BackgroundNet, Descriptor, LocalNet, Mlp, UpsamplerNet, Vgg};
pub use params::{Param, ParamStore};

use crate::error::{Error, Result};

/// Default number of scene classes.
pub const DEFAULT_CLASSES: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClassificationMode {
    #[default]
    Off,
    /// VGG over the final full-scale reconstruction.
    FromRecon,
    /// Fully connected head over the fit-in classification vector.
    FromVector,
    /// VGG over the raw panorama; trained without any exploration.
    UpperBound,
}

impl ClassificationMode {
    pub fn name(&self) -> &'static str {
        match self {
            ClassificationMode::Off => "off",
            ClassificationMode::FromRecon => "from-recon",
            ClassificationMode::FromVector => "from-vector",
            ClassificationMode::UpperBound => "upper-bound",
        }
    }
}

impl fmt::Display for ClassificationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassificationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        [
            ClassificationMode::Off,
            ClassificationMode::FromRecon,
            ClassificationMode::FromVector,
            ClassificationMode::UpperBound,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown classification mode {s:?}"))
    }
}

pub enum Classifier {
    Recon(Vgg),
    Vector { features: Descriptor, head: Mlp },
}

pub const CLASSIFIER_PREFIX: &str = "classifier";
pub const ATTENTION_PREFIX: &str = "attention";

/// The exploring agent: every block that takes part in an episode.
pub struct ExplorerModel {
    pub arch: Architecture,
    pub mode: ClassificationMode,
    pub classes: usize,
    pub store: ParamStore,
    pub local: LocalNet,
    pub descriptor: Descriptor,
    pub background: BackgroundNet,
    pub upsampler: UpsamplerNet,
    pub attention: Mlp,
    pub classifier: Option<Classifier>,
}

impl ExplorerModel {
    pub fn new(arch: Architecture, mode: ClassificationMode, classes: usize, dtype: DType, seed: u64) -> Result<Self> {
        arch.validate().map_err(Error::Config)?;
        if mode == ClassificationMode::UpperBound {
            return Err(Error::Config(
                "the upper-bound classifier is a separate model, not an explorer head".into(),
            ));
        }
        if mode != ClassificationMode::Off && classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        let mut store = ParamStore::new(dtype, seed);
        let local = LocalNet::new(&mut store, &arch)?;
        let descriptor = Descriptor::new(&mut store, &arch, Descriptor::PREFIX)?;
        let background = BackgroundNet::new(&mut store, &arch)?;
        let upsampler = UpsamplerNet::new(&mut store, &arch)?;
        let attention = Mlp::new(
            &mut store,
            ATTENTION_PREFIX,
            arch.vector_len(),
            arch.attention_hidden,
            lookout_core::PATCH_COUNT,
        )?;
        let classifier = match mode {
            ClassificationMode::Off | ClassificationMode::UpperBound => None,
            ClassificationMode::FromRecon => Some(Classifier::Recon(Vgg::new(
                &mut store,
                &arch,
                CLASSIFIER_PREFIX,
                classes,
            )?)),
            ClassificationMode::FromVector => {
                let features = Descriptor::new(&mut store, &arch, Descriptor::CLASS_PREFIX)?;
                let head = Mlp::new(
                    &mut store,
                    CLASSIFIER_PREFIX,
                    arch.vector_len(),
                    arch.classifier_hidden,
                    classes,
                )?;
                Some(Classifier::Vector { features, head })
            }
        };
        Ok(Self {
            arch,
            mode,
            classes,
            store,
            local,
            descriptor,
            background,
            upsampler,
            attention,
            classifier,
        })
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Names of the top-level blocks present in this model, in declaration
    /// order.
    pub fn block_names(&self) -> Vec<&'static str> {
        let mut names = vec![
            LocalNet::PREFIX,
            Descriptor::PREFIX,
            BackgroundNet::PREFIX,
            UpsamplerNet::PREFIX,
            ATTENTION_PREFIX,
        ];
        match self.classifier {
            Some(Classifier::Recon(_)) => names.push(CLASSIFIER_PREFIX),
            Some(Classifier::Vector { .. }) => {
                names.push(Descriptor::CLASS_PREFIX);
                names.push(CLASSIFIER_PREFIX);
            }
            None => {}
        }
        names
    }
}

/// VGG trained on whole panoramas: the classification upper bound.
pub struct UpperBoundModel {
    pub arch: Architecture,
    pub classes: usize,
    pub store: ParamStore,
    pub vgg: Vgg,
}

impl UpperBoundModel {
    pub fn new(arch: Architecture, classes: usize, dtype: DType, seed: u64) -> Result<Self> {
        arch.validate().map_err(Error::Config)?;
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        let mut store = ParamStore::new(dtype, seed);
        let vgg = Vgg::new(&mut store, &arch, CLASSIFIER_PREFIX, classes)?;
        Ok(Self {
            arch,
            classes,
            store,
            vgg,
        })
    }
}
