use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Declarative 3D U-Net layout.
///
/// Each of the `channels.len()` stages runs `convs_per_stage` blocks of
/// conv -> instance norm -> leaky ReLU. Encoder stages are separated by 2x max
/// pooling; each decoder stage upsamples with a 2x transposed convolution,
/// concatenates `[upsampled, skip]` and runs its own conv blocks. A final 1x1x1
/// convolution maps to `out_channels` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchDescriptor {
    pub channels: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub convs_per_stage: usize,
    pub instance_norm: bool,
    pub negative_slope: f64,
}

/// One named parameter tensor in the layer inventory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayerSpec {
    fn new(name: String, shape: Vec<usize>) -> Self {
        LayerSpec { name, shape }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

impl ArchDescriptor {
    fn preset(channels: Vec<usize>) -> Self {
        ArchDescriptor {
            channels,
            in_channels: 2,
            out_channels: 2,
            kernel: 3,
            convs_per_stage: 2,
            instance_norm: true,
            negative_slope: 0.01,
        }
    }

    /// Five stages, 32 to 512 channels.
    pub fn vanilla() -> Self {
        Self::preset(vec![32, 64, 128, 256, 512])
    }

    /// Four stages, 16 to 128 channels.
    pub fn shallow() -> Self {
        Self::preset(vec![16, 32, 64, 128])
    }

    /// Six stages, 32 to 1024 channels.
    pub fn deeper() -> Self {
        Self::preset(vec![32, 64, 128, 256, 512, 1024])
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "vanilla" => Some(Self::vanilla()),
            "shallow" => Some(Self::shallow()),
            "deeper" => Some(Self::deeper()),
            _ => None,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.channels.len()
    }

    /// Patch extents must be multiples of this.
    pub fn required_divisor(&self) -> usize {
        1 << (self.num_stages() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Descriptor(msg));
        if self.channels.len() < 2 {
            return bad(format!("need at least 2 stages, got {}", self.channels.len()));
        }
        if self.channels[0] == 0 {
            return bad("first stage must have at least one channel".into());
        }
        if let Some(w) = self.channels.windows(2).find(|w| w[1] != 2 * w[0]) {
            return bad(format!("channels must double per stage, got {} -> {}", w[0], w[1]));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("in/out channels must be >= 1".into());
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if self.convs_per_stage == 0 {
            return bad("convs_per_stage must be >= 1".into());
        }
        if !(self.negative_slope.is_finite() && self.negative_slope >= 0.0) {
            return bad(format!("negative_slope {} must be finite and >= 0", self.negative_slope));
        }
        if self.num_stages() > 16 {
            return bad("at most 16 stages".into());
        }
        Ok(())
    }

    fn conv_block(&self, prefix: &str, mut cin: usize, c: usize, out: &mut Vec<LayerSpec>) {
        let k = self.kernel;
        for j in 0..self.convs_per_stage {
            out.push(LayerSpec::new(format!("{prefix}.conv{j}.weight"), vec![c, cin, k, k, k]));
            out.push(LayerSpec::new(format!("{prefix}.conv{j}.bias"), vec![c]));
            if self.instance_norm {
                out.push(LayerSpec::new(format!("{prefix}.norm{j}.weight"), vec![c]));
                out.push(LayerSpec::new(format!("{prefix}.norm{j}.bias"), vec![c]));
            }
            cin = c;
        }
    }

    /// Every parameter tensor, in the order the forward pass consumes them
    /// and the weight file stores them.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let mut cin = self.in_channels;
        for (s, &c) in self.channels.iter().enumerate() {
            self.conv_block(&format!("encoder.{s}"), cin, c, &mut out);
            cin = c;
        }
        for s in (0..self.num_stages() - 1).rev() {
            let (c, below) = (self.channels[s], self.channels[s + 1]);
            out.push(LayerSpec::new(format!("decoder.{s}.up.weight"), vec![below, c, 2, 2, 2]));
            out.push(LayerSpec::new(format!("decoder.{s}.up.bias"), vec![c]));
            self.conv_block(&format!("decoder.{s}"), 2 * c, c, &mut out);
        }
        out.push(LayerSpec::new("head.weight".into(), vec![self.out_channels, self.channels[0], 1, 1, 1]));
        out.push(LayerSpec::new("head.bias".into(), vec![self.out_channels]));
        out
    }

    /// Total parameter count: weights, biases and norm affine terms.
    pub fn param_count(&self) -> Result<usize> {
        self.validate()?;
        Ok(self.layers().iter().map(LayerSpec::numel).sum())
    }

    /// Canonical text form, embedded in weight files and hashed for the
    /// fingerprint.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let channels: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        writeln!(s, "stages={}", self.num_stages()).unwrap();
        writeln!(s, "channels={}", channels.join(",")).unwrap();
        writeln!(s, "in_channels={}", self.in_channels).unwrap();
        writeln!(s, "out_channels={}", self.out_channels).unwrap();
        writeln!(s, "kernel={}", self.kernel).unwrap();
        writeln!(s, "convs_per_stage={}", self.convs_per_stage).unwrap();
        writeln!(s, "norm={}", if self.instance_norm { "instance" } else { "none" }).unwrap();
        writeln!(s, "negative_slope={}", self.negative_slope).unwrap();
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Descriptor(format!("malformed line {line:?}")))?;
            if fields.insert(k.trim(), v.trim()).is_some() {
                return Err(Error::Descriptor(format!("duplicate key {k:?}")));
            }
        }
        let mut take = |key: &str| {
            fields
                .remove(key)
                .ok_or_else(|| Error::Descriptor(format!("missing key {key:?}")))
        };
        let num = |key: &str, v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Descriptor(format!("{key}: {v:?} is not an integer")))
        };
        let stages = num("stages", take("stages")?)?;
        let channels = take("channels")?
            .split(',')
            .map(|c| num("channels", c.trim()))
            .collect::<Result<Vec<_>>>()?;
        let desc = ArchDescriptor {
            channels,
            in_channels: num("in_channels", take("in_channels")?)?,
            out_channels: num("out_channels", take("out_channels")?)?,
            kernel: num("kernel", take("kernel")?)?,
            convs_per_stage: num("convs_per_stage", take("convs_per_stage")?)?,
            instance_norm: match take("norm")? {
                "instance" => true,
                "none" => false,
                other => return Err(Error::Descriptor(format!("unknown norm {other:?}"))),
            },
            negative_slope: {
                let v = take("negative_slope")?;
                v.parse()
                    .map_err(|_| Error::Descriptor(format!("negative_slope: {v:?} is not a number")))?
            },
        };
        if let Some(key) = fields.keys().next() {
            return Err(Error::Descriptor(format!("unknown key {key:?}")));
        }
        if stages != desc.channels.len() {
            return Err(Error::Descriptor(format!(
                "stages={stages} but {} channel entries",
                desc.channels.len()
            )));
        }
        desc.validate()?;
        Ok(desc)
    }

    /// First 8 bytes of SHA-256 over the canonical text, as hex.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Rough upper bound on activation memory for one forward pass over a
    /// patch: retained skip maps plus the three largest live maps at the
    /// widest decoder stage (concatenated input, conv output, upsampled map).
    pub fn peak_activation_bytes(&self, patch: [usize; 3]) -> usize {
        let voxels = |s: usize| patch.iter().map(|&n| n >> s).product::<usize>();
        let skips: usize = (0..self.num_stages() - 1).map(|s| self.channels[s] * voxels(s)).sum();
        let working = (0..self.num_stages())
            .map(|s| {
                let c = self.channels[s];
                (2 * c + c + c).max(self.in_channels + c) * voxels(s)
            })
            .max()
            .unwrap_or(0);
        (skips + working) * std::mem::size_of::<f32>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form count per stage, written independently of `layers()`:
    /// encoder convs, then per decoder stage the transposed conv and the two
    /// convs over the concatenated input, then the 1x1x1 head.
    fn count_oracle(ch: &[usize], cin: usize, cout: usize, norm: bool) -> usize {
        let n = if norm { 2 } else { 0 };
        let mut total = 0;
        let mut prev = cin;
        for &c in ch {
            total += 27 * prev * c + c + n * c;
            total += 27 * c * c + c + n * c;
            prev = c;
        }
        for s in (0..ch.len() - 1).rev() {
            let c = ch[s];
            total += 8 * ch[s + 1] * c + c;
            total += 27 * 2 * c * c + c + n * c;
            total += 27 * c * c + c + n * c;
        }
        total + ch[0] * cout + cout
    }

    #[test]
    fn vanilla_and_shallow_counts() {
        let v = ArchDescriptor::vanilla().param_count().unwrap();
        let s = ArchDescriptor::shallow().param_count().unwrap();
        assert_eq!(v, count_oracle(&[32, 64, 128, 256, 512], 2, 2, true));
        assert_eq!(s, count_oracle(&[16, 32, 64, 128], 2, 2, true));
        assert_eq!(v, 22_582_114);
        assert_eq!(s, 1_402_418);
        assert_eq!(format!("{:.1}", v as f64 / 1e6), "22.6");
        assert_eq!(format!("{:.1}", s as f64 / 1e6), "1.4");
        let ratio = v as f64 / s as f64;
        assert!((ratio - 16.1).abs() <= 0.2, "{ratio}");
    }

    #[test]
    fn deeper_count_is_constructible() {
        let d = ArchDescriptor::deeper().param_count().unwrap();
        assert_eq!(d, count_oracle(&[32, 64, 128, 256, 512, 1024], 2, 2, true));
        assert_eq!(d, 90_487_138);
    }

    #[test]
    fn toy_count_by_hand() {
        // enc0: (27+1) + (27+1) = 56; enc1: (54+2) + (108+2) = 166
        // dec0: up 16+1, conv 54+1, conv 27+1 = 100; head 1+1 = 2
        let toy = ArchDescriptor {
            channels: vec![1, 2],
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            convs_per_stage: 2,
            instance_norm: false,
            negative_slope: 0.01,
        };
        assert_eq!(toy.param_count().unwrap(), 324);
    }

    #[test]
    fn invalid_descriptors_rejected() {
        let mut d = ArchDescriptor::vanilla();
        d.channels = vec![32, 48];
        assert!(matches!(d.param_count(), Err(Error::Descriptor(_))));
        d.channels = vec![32];
        assert!(d.validate().is_err());
        let mut d = ArchDescriptor::vanilla();
        d.kernel = 2;
        assert!(d.validate().is_err());
    }

    #[test]
    fn canonical_text_round_trip() {
        for d in [ArchDescriptor::vanilla(), ArchDescriptor::shallow(), ArchDescriptor::deeper()] {
            assert_eq!(ArchDescriptor::parse(&d.canonical_text()).unwrap(), d);
        }
        assert_ne!(ArchDescriptor::vanilla().fingerprint(), ArchDescriptor::shallow().fingerprint());
        assert_eq!(ArchDescriptor::vanilla().fingerprint().len(), 16);
        assert!(ArchDescriptor::parse("stages=2\nchannels=1,2\n").is_err());
        let extra = format!("{}bogus=1\n", ArchDescriptor::vanilla().canonical_text());
        assert!(ArchDescriptor::parse(&extra).is_err());
    }

    #[test]
    fn layer_inventory_order() {
        let names: Vec<String> = ArchDescriptor::shallow().layers().into_iter().map(|l| l.name).collect();
        assert_eq!(names[0], "encoder.0.conv0.weight");
        assert!(names.iter().position(|n| n == "decoder.2.up.weight") < names.iter().position(|n| n == "decoder.0.up.weight"));
        assert_eq!(names.last().unwrap(), "head.bias");
    }
}
