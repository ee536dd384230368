use crate::data::{N_BANDS, N_CHANNELS};
use crate::error::{Error, Result};
use crate::kv::KeyValues;

/// Decoder shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub n_layer: usize,
    pub n_head: usize,
    pub n_embd: usize,
    pub block_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub mlp_multiplier: usize,
    /// Learned absolute positional table.
    pub positional: bool,
    pub dropout: f32,
}

/// `(name, n_layer, n_head, n_embd, block_size)`.
pub const PRESETS: [(&str, usize, usize, usize, usize); 7] = [
    ("700M", 36, 20, 1280, 256),
    ("300M", 26, 16, 1024, 256),
    ("100M", 20, 10, 640, 256),
    ("10M", 10, 10, 320, 256),
    ("toy", 4, 4, 128, 64),
    ("micro", 2, 4, 64, 64),
    ("nano", 1, 2, 32, 64),
];

impl ModelConfig {
    pub fn new(n_layer: usize, n_head: usize, n_embd: usize, block_size: usize) -> Self {
        Self {
            name: format!("L{n_layer}H{n_head}D{n_embd}"),
            n_layer,
            n_head,
            n_embd,
            block_size,
            in_channels: N_CHANNELS,
            out_channels: N_BANDS,
            mlp_multiplier: 4,
            positional: true,
            dropout: 0.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let &(label, l, h, d, b) = PRESETS
            .iter()
            .find(|p| p.0.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                let names: Vec<_> = PRESETS.iter().map(|p| p.0).collect();
                Error::Config(format!("unknown preset {name:?}; expected one of {}", names.join(", ")))
            })?;
        Ok(Self {
            name: label.to_string(),
            ..Self::new(l, h, d, b)
        })
    }

    /// Parameter count the preset name stands for, if it encodes one.
    pub fn nominal_params(&self) -> Option<f64> {
        let digits = self.name.strip_suffix('M')?;
        digits.parse::<f64>().ok().map(|m| m * 1e6)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_head == 0 || self.n_embd == 0 || self.n_embd % self.n_head != 0 {
            return Err(Error::Config(format!(
                "n_embd {} is not divisible by n_head {}",
                self.n_embd, self.n_head
            )));
        }
        if self.block_size < 2 {
            return Err(Error::Config("block_size must be at least 2".into()));
        }
        if self.in_channels != N_CHANNELS || self.out_channels != N_BANDS {
            return Err(Error::Config(format!(
                "channels must be {N_CHANNELS} in and {N_BANDS} out"
            )));
        }
        if self.mlp_multiplier == 0 {
            return Err(Error::Config("mlp_multiplier must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.mlp_multiplier * self.n_embd
    }

    /// Exact learnable-scalar count.
    pub fn param_count(&self) -> u64 {
        let d = self.n_embd as u64;
        let h = self.hidden() as u64;
        let cin = self.in_channels as u64;
        let cout = self.out_channels as u64;
        let embed = cin * h + h + h * d + d;
        let pos = if self.positional {
            self.block_size as u64 * d
        } else {
            0
        };
        let block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * h + h) + (h * d + d);
        embed + pos + self.n_layer as u64 * block + 2 * d + (d * cout + cout)
    }

    pub fn to_kv(&self) -> String {
        KeyValues::render(&[
            ("name", self.name.clone()),
            ("n_layer", self.n_layer.to_string()),
            ("n_head", self.n_head.to_string()),
            ("n_embd", self.n_embd.to_string()),
            ("block_size", self.block_size.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("out_channels", self.out_channels.to_string()),
            ("mlp_multiplier", self.mlp_multiplier.to_string()),
            ("positional", self.positional.to_string()),
            ("dropout", self.dropout.to_string()),
        ])
    }

    /// Reads model keys out of `kv`, starting from `preset` (or from the
    /// `preset` key if present).
    pub fn from_kv(kv: &mut KeyValues, preset: Option<&str>) -> Result<Self> {
        let mut c = match kv.take::<String>("preset")?.as_deref().or(preset) {
            Some(p) => Self::preset(p)?,
            None => Self::preset("toy")?,
        };
        if let Some(v) = kv.take("name")? {
            c.name = v;
        }
        c.n_layer = kv.take_or("n_layer", c.n_layer)?;
        c.n_head = kv.take_or("n_head", c.n_head)?;
        c.n_embd = kv.take_or("n_embd", c.n_embd)?;
        c.block_size = kv.take_or("block_size", c.block_size)?;
        c.in_channels = kv.take_or("in_channels", c.in_channels)?;
        c.out_channels = kv.take_or("out_channels", c.out_channels)?;
        c.mlp_multiplier = kv.take_or("mlp_multiplier", c.mlp_multiplier)?;
        c.positional = kv.take_or("positional", c.positional)?;
        c.dropout = kv.take_or("dropout", c.dropout)?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn formula(l: u64, d: u64, block: u64) -> u64 {
        14 * 4 * d + 4 * d + 4 * d * d + d + block * d + l * (12 * d * d + 13 * d) + 2 * d + 10 * d + 10
    }

    #[test]
    fn count_matches_closed_form() {
        for (name, l, _, d, b) in PRESETS {
            let c = ModelConfig::preset(name).unwrap();
            assert_eq!(c.param_count(), formula(l as u64, d as u64, b as u64), "{name}");
        }
    }

    #[test]
    fn zero_layers_counts_embedding_and_head_only() {
        let c = ModelConfig::new(0, 2, 32, 16);
        let d = 32;
        assert_eq!(c.param_count(), (14 * 128 + 128 + 128 * d + d) + 16 * d + 2 * d + (10 * d + 10));
    }

    #[test]
    fn kv_round_trip() {
        let mut c = ModelConfig::preset("micro").unwrap();
        c.positional = false;
        let mut kv = KeyValues::parse(&c.to_kv()).unwrap();
        assert_eq!(ModelConfig::from_kv(&mut kv, None).unwrap(), c);
        kv.finish().unwrap();
    }

    #[test]
    fn divisibility_error() {
        assert!(matches!(ModelConfig::new(1, 3, 32, 16).validate(), Err(Error::Config(_))));
        assert!(ModelConfig::preset("huge").is_err());
    }
}
