use std::fmt;
use std::str::FromStr;

use lookout_core::geometry::SCALE_COUNT;
use lookout_core::memory::SLOT_COUNT;
use lookout_core::GridGeometry;
use serde::{Deserialize, Serialize};

/// Named size configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 128×256 panoramas, 16-px blocks.
    #[default]
    Full,
    /// 32×64 panoramas, 4-px blocks, channel counts divided by 8.
    Micro,
}

impl Profile {
    pub fn name(&self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Micro => "micro",
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Profile::Full => Architecture::full(),
            Profile::Micro => Architecture::micro(),
        }
    }

    pub fn geometry(&self) -> GridGeometry {
        self.architecture().geometry()
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Profile::Full),
            "micro" => Ok(Profile::Micro),
            other => Err(format!("unknown profile {other:?} (expected full or micro)")),
        }
    }
}

/// Every size that shapes a parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Grid block size in pixels.
    pub block: usize,
    /// Channels of each local encoder stage; every stage is followed by a
    /// 2× max-pool.
    pub local_stages: Vec<usize>,
    pub local_bottleneck: usize,
    pub descriptor_channels: usize,
    /// Side of the adaptive pooling grid of the descriptor.
    pub descriptor_grid: usize,
    pub background_hidden: usize,
    /// Channels of the four upsampler stages, coarsest first.
    pub upsampler_channels: [usize; SCALE_COUNT],
    pub attention_hidden: usize,
    pub classifier_hidden: usize,
    pub vgg_channels: Vec<usize>,
    pub vgg_convs: Vec<usize>,
    pub vgg_hidden: usize,
}

impl Architecture {
    pub fn full() -> Self {
        Self {
            block: 16,
            local_stages: vec![32, 64, 128],
            local_bottleneck: 128,
            descriptor_channels: 8,
            descriptor_grid: 4,
            background_hidden: 1024,
            upsampler_channels: [64, 48, 32, 16],
            attention_hidden: 512,
            classifier_hidden: 512,
            vgg_channels: vec![64, 128, 256, 512, 512],
            vgg_convs: vec![2, 2, 4, 4, 4],
            vgg_hidden: 4096,
        }
    }

    /// The 32×64 configuration. A 12-px canvas only halves twice, so the
    /// local encoder has two pooled stages and a 3×3 bottleneck.
    pub fn micro() -> Self {
        Self {
            block: 4,
            local_stages: vec![8, 16],
            local_bottleneck: 32,
            descriptor_channels: 4,
            descriptor_grid: 2,
            background_hidden: 128,
            upsampler_channels: [16, 16, 12, 8],
            attention_hidden: 64,
            classifier_hidden: 64,
            vgg_channels: vec![8, 16, 32, 64, 64],
            vgg_convs: vec![2, 2, 4, 4, 4],
            vgg_hidden: 512,
        }
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::new(self.block).expect("architecture block size is valid")
    }

    pub fn canvas(&self) -> usize {
        3 * self.block
    }

    pub fn bottleneck_side(&self) -> usize {
        self.canvas() >> self.local_stages.len()
    }

    pub fn features_per_slot(&self) -> usize {
        self.descriptor_channels * self.descriptor_grid * self.descriptor_grid
    }

    pub fn vector_len(&self) -> usize {
        SLOT_COUNT * self.features_per_slot()
    }

    /// Size of the background reconstruction (the coarsest scale).
    pub fn background_dims(&self) -> (usize, usize) {
        self.geometry().scales()[0]
    }

    pub fn validate(&self) -> Result<(), String> {
        let g = GridGeometry::new(self.block).map_err(|e| e.to_string())?;
        if self.local_stages.is_empty() || self.local_stages.contains(&0) {
            return Err("local_stages must be non-empty and positive".into());
        }
        if self.canvas() % (1 << self.local_stages.len()) != 0 || self.bottleneck_side() == 0 {
            return Err(format!(
                "canvas {} cannot be halved {} times",
                self.canvas(),
                self.local_stages.len()
            ));
        }
        if self.descriptor_grid == 0 || self.descriptor_grid > self.bottleneck_side() {
            return Err("descriptor_grid must be in 1..=bottleneck side".into());
        }
        if self.vgg_channels.len() != self.vgg_convs.len() || self.vgg_channels.is_empty() {
            return Err("vgg_channels and vgg_convs must have equal non-zero length".into());
        }
        let pools = 1usize << self.vgg_channels.len();
        if g.height() % pools != 0 || g.width() % pools != 0 {
            return Err("vgg pooling does not divide the panorama".into());
        }
        let positive = [
            self.local_bottleneck,
            self.descriptor_channels,
            self.background_hidden,
            self.attention_hidden,
            self.classifier_hidden,
            self.vgg_hidden,
        ];
        if positive.contains(&0) || self.upsampler_channels.contains(&0) || self.vgg_channels.contains(&0) {
            return Err("all widths must be positive".into());
        }
        Ok(())
    }
}
