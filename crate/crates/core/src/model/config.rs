/// One set-abstraction layer: `n_points` FPS centers, `sample_num` ball-query
/// neighbors within `radius`, and the shared MLP widths. `mlp_channels[0]`
/// is the incoming feature width (0 for the raw-coordinate layer); the
/// three relative coordinates are added on top of it.
#[derive(Debug, Clone, PartialEq)]
pub struct SaLayerConfig {
    pub n_points: usize,
    pub radius: f64,
    pub sample_num: usize,
    pub mlp_channels: Vec<usize>,
}

impl SaLayerConfig {
    pub fn in_channels(&self) -> usize {
        self.mlp_channels[0]
    }

    pub fn out_channels(&self) -> usize {
        *self.mlp_channels.last().expect("non-empty MLP")
    }
}

/// How the channel attention gate is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionMode {
    /// Learned sigmoid mask.
    #[default]
    Learned,
    /// Mask replaced by a constant all-ones row.
    ForcedOnes,
    /// Module skipped entirely.
    Disabled,
}

/// Proportional shrink of the network for desk-scale runs. Point counts,
/// neighbor counts and hidden widths are divided, radii multiplied; the layer
/// structure is unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelScale {
    pub input_points: usize,
    pub point_divisor: usize,
    pub width_divisor: usize,
    pub sample_divisor: usize,
    pub radius_scale: f64,
}

impl ModelScale {
    pub fn full() -> Self {
        Self {
            input_points: 20_480,
            point_divisor: 1,
            width_divisor: 1,
            sample_divisor: 1,
            radius_scale: 1.0,
        }
    }

    /// 256 input points, widths / 8.
    pub fn tiny() -> Self {
        Self {
            input_points: 256,
            point_divisor: 16,
            width_divisor: 8,
            sample_divisor: 4,
            radius_scale: 2.5,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }
}

/// Complete architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLocConfig {
    pub input_points: usize,
    pub sa: Vec<SaLayerConfig>,
    pub group_all_mlp: Vec<usize>,
    pub group_all_fc: usize,
    /// FC widths of each regressor branch, input first; the final layer
    /// has no activation.
    pub regressor: Vec<usize>,
    pub slope: f64,
}

const SA_TABLE: [(usize, f64, usize, [usize; 4]); 4] = [
    (2048, 0.2, 64, [0, 64, 64, 128]),
    (1024, 0.4, 32, [128, 128, 128, 256]),
    (512, 0.8, 16, [256, 128, 128, 256]),
    (256, 1.2, 16, [256, 128, 128, 256]),
];
const GROUP_ALL_MLP: [usize; 4] = [256, 256, 512, 1024];
const GROUP_ALL_FC: usize = 1024;
const REGRESSOR: [usize; 5] = [1024, 512, 128, 64, 3];
pub const LEAKY_SLOPE: f64 = 0.2;

impl PointLocConfig {
    pub fn full() -> Self {
        Self::from_scale(&ModelScale::full())
    }

    pub fn from_scale(scale: &ModelScale) -> Self {
        let w = |c: usize| if c == 0 { 0 } else { (c / scale.width_divisor).max(1) };
        let sa = SA_TABLE
            .iter()
            .map(|&(n, r, k, mlp)| SaLayerConfig {
                n_points: (n / scale.point_divisor).max(1),
                radius: r * scale.radius_scale,
                sample_num: (k / scale.sample_divisor).max(1),
                mlp_channels: mlp.iter().map(|&c| w(c)).collect(),
            })
            .collect();
        let mut regressor: Vec<usize> = REGRESSOR.iter().map(|&c| w(c)).collect();
        *regressor.last_mut().unwrap() = 3;
        Self {
            input_points: scale.input_points,
            sa,
            group_all_mlp: GROUP_ALL_MLP.iter().map(|&c| w(c)).collect(),
            group_all_fc: w(GROUP_ALL_FC),
            regressor,
            slope: LEAKY_SLOPE,
        }
    }

    /// Replaces the per-layer ball-query radii.
    pub fn with_radii(mut self, radii: &[f64]) -> Self {
        for (layer, &r) in self.sa.iter_mut().zip(radii) {
            layer.radius = r;
        }
        self
    }

    /// Feature width entering the attention gate and group-all layer.
    pub fn encoder_channels(&self) -> usize {
        self.sa.last().expect("four SA layers").out_channels()
    }

    pub fn encoder_points(&self) -> usize {
        self.sa.last().expect("four SA layers").n_points
    }

    /// Checks that consecutive layers chain and sizes are usable.
    pub fn validate(&self) -> Result<(), String> {
        if self.sa.is_empty() {
            return Err("at least one SA layer required".into());
        }
        let mut prev_points = self.input_points;
        let mut prev_channels = 0;
        for (i, l) in self.sa.iter().enumerate() {
            if l.mlp_channels.len() < 2 {
                return Err(format!("sa{}: MLP needs at least one layer", i + 1));
            }
            if l.in_channels() != prev_channels {
                return Err(format!(
                    "sa{}: expects {} input channels, previous layer emits {}",
                    i + 1,
                    l.in_channels(),
                    prev_channels
                ));
            }
            if l.n_points == 0 || l.n_points > prev_points {
                return Err(format!("sa{}: cannot sample {} of {} points", i + 1, l.n_points, prev_points));
            }
            if !(l.radius > 0.0) || l.sample_num == 0 {
                return Err(format!("sa{}: radius and sample count must be positive", i + 1));
            }
            prev_points = l.n_points;
            prev_channels = l.out_channels();
        }
        if self.group_all_mlp.first() != Some(&prev_channels) {
            return Err("group-all MLP does not start at the encoder width".into());
        }
        if self.regressor.first() != Some(&self.group_all_fc) || self.regressor.last() != Some(&3) {
            return Err("regressor must map the embedding to 3 outputs".into());
        }
        Ok(())
    }
}
