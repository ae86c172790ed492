use rand::Rng;

use super::config::{ModelConfig, SCALES};
use crate::error::{Error, Result};
use crate::tensorcore::{Binder, ConvGeometry, Graph, ParamStore, Tensor, Var};

const ATTENTION_KERNEL: usize = 7;
const CHANNEL_REDUCTION: usize = 8;

/// Graph handles produced by one forward pass. Pyramids are coarsest first
/// and hold a single finest-scale map when multi-scale fusion is off.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub density: Vec<Var>,
    pub localization: Vec<Var>,
    /// `[N, E, H, W]` embeddings of the current and the earlier frame.
    pub embedding: Option<(Var, Var)>,
    /// Every sigmoid attention gate.
    pub gates: Vec<Var>,
}

fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// Fresh parameters: He-normal hidden convolutions, N(0, 0.01²) output
/// heads and attention convolutions, zero temporal offsets.
pub fn init_params<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<ParamStore> {
    config.validate()?;
    let mut p = ParamStore::new();
    let ch = config.channels;
    let cf = config.fuse_channels;
    let mut cin = 3;
    for g in 0..SCALES {
        for j in 0..config.group_depth[g] {
            let name = format!("backbone.g{}.conv{}", g + 1, j + 1);
            p.add_conv(&name, ch[g], cin, 3, he_std(cin * 9), rng);
            cin = ch[g];
        }
    }
    let merged: usize = ch.iter().sum();
    p.add_conv("temporal.offset", 18, merged, 3, 0.0, rng);
    p.add_conv("temporal.deform", cf, merged, 3, he_std(merged * 9), rng);

    // finest-first index: scale s = 1 is coarsest and pairs with group 4
    let first = if config.use_multiscale { 1 } else { SCALES };
    for s in first..=SCALES {
        let c = ch[SCALES - s] + cf;
        if config.use_attention {
            p.add_conv(
                &format!("scale{s}.attention"),
                1,
                2,
                ATTENTION_KERNEL,
                0.01,
                rng,
            );
        }
        p.add_conv(&format!("scale{s}.compress"), cf, c, 1, he_std(c), rng);
        if s > 1 && config.use_multiscale {
            p.add_conv(&format!("fuse{s}"), cf, 2 * cf, 3, he_std(2 * cf * 9), rng);
        }
        if s < SCALES {
            p.add_conv(&format!("head{s}.den"), 1, cf, 1, 0.01, rng);
            if config.use_localization_head {
                p.add_conv(&format!("head{s}.loc"), 1, cf, 1, 0.01, rng);
            }
        }
    }
    let cz = if config.use_multiscale {
        SCALES * cf
    } else {
        cf
    };
    if config.use_attention {
        let hidden = (cz / CHANNEL_REDUCTION).max(1);
        p.insert(
            "final.channel.fc1.weight",
            Tensor::randn([hidden, cz, 1, 1], he_std(cz), rng),
        );
        p.insert("final.channel.fc1.bias", Tensor::zeros([1, hidden, 1, 1]));
        p.insert(
            "final.channel.fc2.weight",
            Tensor::randn([cz, hidden, 1, 1], 0.01, rng),
        );
        p.insert("final.channel.fc2.bias", Tensor::zeros([1, cz, 1, 1]));
        p.add_conv("final.spatial", 1, 2, ATTENTION_KERNEL, 0.01, rng);
    }
    p.add_conv("final.den", 1, cz, 3, 0.01, rng);
    if config.use_localization_head {
        p.add_conv("final.loc", 1, cz, 3, 0.01, rng);
    }
    if config.use_association_head {
        p.add_conv(
            "assoc.embed",
            config.embedding_dim,
            ch[0],
            3,
            he_std(ch[0] * 9),
            rng,
        );
    }
    Ok(p)
}

struct Net<'a, 'b> {
    g: &'a mut Graph,
    b: &'a mut Binder<'b>,
    gates: Vec<Var>,
}

impl Net<'_, '_> {
    fn conv(&mut self, x: Var, name: &str, k: usize) -> Result<Var> {
        let w = self.b.var(self.g, &format!("{name}.weight"))?;
        let bias = self.b.var(self.g, &format!("{name}.bias"))?;
        self.g.conv2d(x, w, Some(bias), ConvGeometry::same(k))
    }

    fn conv_relu(&mut self, x: Var, name: &str, k: usize) -> Result<Var> {
        let y = self.conv(x, name, k)?;
        Ok(self.g.relu(y))
    }

    /// Gate every position by a sigmoid of a convolution over the
    /// channel-wise mean and max.
    fn spatial_attention(&mut self, x: Var, name: &str) -> Result<Var> {
        let mean = self.g.channel_mean(x);
        let max = self.g.channel_max(x);
        let pooled = self.g.concat(&[mean, max])?;
        let logits = self.conv(pooled, name, ATTENTION_KERNEL)?;
        let gate = self.g.sigmoid(logits);
        self.gates.push(gate);
        self.g.mul(x, gate)
    }

    /// Gate every channel by a shared two-layer perceptron over the
    /// globally average- and max-pooled features.
    fn channel_attention(&mut self, x: Var, name: &str) -> Result<Var> {
        let avg = self.g.global_avg_pool(x);
        let max = self.g.global_max_pool(x);
        let mlp = |net: &mut Self, v: Var| -> Result<Var> {
            let w1 = net.b.var(net.g, &format!("{name}.fc1.weight"))?;
            let b1 = net.b.var(net.g, &format!("{name}.fc1.bias"))?;
            let w2 = net.b.var(net.g, &format!("{name}.fc2.weight"))?;
            let b2 = net.b.var(net.g, &format!("{name}.fc2.bias"))?;
            let h = net.g.fully_connected(v, w1, Some(b1))?;
            let h = net.g.relu(h);
            net.g.fully_connected(h, w2, Some(b2))
        };
        let a = mlp(self, avg)?;
        let m = mlp(self, max)?;
        let logits = self.g.add(a, m)?;
        let gate = self.g.sigmoid(logits);
        self.gates.push(gate);
        self.g.mul(x, gate)
    }

    /// Group outputs, finest first.
    fn backbone(&mut self, x: Var, config: &ModelConfig) -> Result<[Var; SCALES]> {
        let mut h = x;
        let mut out = Vec::with_capacity(SCALES);
        for g in 0..SCALES {
            if g > 0 {
                h = self.g.maxpool2(h)?;
            }
            for j in 0..config.group_depth[g] {
                h = self.conv_relu(h, &format!("backbone.g{}.conv{}", g + 1, j + 1), 3)?;
            }
            out.push(h);
        }
        Ok(out.try_into().expect("four groups"))
    }

    fn pool_times(&mut self, mut x: Var, k: usize) -> Result<Var> {
        for _ in 0..k {
            x = self.g.maxpool2(x)?;
        }
        Ok(x)
    }

    fn up_times(&mut self, mut x: Var, k: usize) -> Result<Var> {
        for _ in 0..k {
            x = self.g.upsample2(x)?;
        }
        Ok(x)
    }

    /// Merge all earlier-frame groups at the coarsest scale and pass them
    /// through one deformable convolution.
    fn temporal(&mut self, prev: &[Var; SCALES]) -> Result<Var> {
        let mut parts = Vec::with_capacity(SCALES);
        for (g, &f) in prev.iter().enumerate() {
            parts.push(self.pool_times(f, SCALES - 1 - g)?);
        }
        let merged = self.g.concat(&parts)?;
        let offsets = self.conv(merged, "temporal.offset", 3)?;
        let w = self.b.var(self.g, "temporal.deform.weight")?;
        let bias = self.b.var(self.g, "temporal.deform.bias")?;
        let t = self.g.deform_conv2d(merged, w, offsets, Some(bias), 1, 1)?;
        Ok(self.g.relu(t))
    }
}

/// Run the network on a batch of frame pairs `[N, 3, H, W]`.
pub fn forward(
    graph: &mut Graph,
    binder: &mut Binder<'_>,
    current: Var,
    previous: Var,
    config: &ModelConfig,
) -> Result<ForwardOutput> {
    let shape = graph.shape(current);
    if shape != graph.shape(previous) {
        return Err(Error::invalid(format!(
            "frame pair shapes differ: {:?} vs {:?}",
            shape,
            graph.shape(previous)
        )));
    }
    if shape[1] != 3 {
        return Err(Error::Shape {
            op: "forward",
            axis: "channel",
            expected: 3,
            got: shape[1],
        });
    }
    config.check_input(shape[3], shape[2])?;
    let mut net = Net {
        g: graph,
        b: binder,
        gates: Vec::new(),
    };
    let cur = net.backbone(current, config)?;
    let prev = net.backbone(previous, config)?;
    let t1 = net.temporal(&prev)?;

    let first = if config.use_multiscale { 1 } else { SCALES };
    let mut fused: Option<Var> = None;
    let mut fused_all = Vec::new();
    let mut density = Vec::new();
    let mut localization = Vec::new();
    for s in first..=SCALES {
        let temporal = net.up_times(t1, s - 1)?;
        let x = net.g.concat(&[cur[SCALES - s], temporal])?;
        let x = if config.use_attention {
            net.spatial_attention(x, &format!("scale{s}.attention"))?
        } else {
            x
        };
        let a = net.conv_relu(x, &format!("scale{s}.compress"), 1)?;
        let f = match fused {
            Some(coarser) => {
                let up = net.g.upsample2(coarser)?;
                let cat = net.g.concat(&[up, a])?;
                net.conv_relu(cat, &format!("fuse{s}"), 3)?
            }
            None => a,
        };
        if s < SCALES {
            density.push(net.conv(f, &format!("head{s}.den"), 1)?);
            if config.use_localization_head {
                localization.push(net.conv(f, &format!("head{s}.loc"), 1)?);
            }
        }
        fused_all.push(f);
        fused = Some(f);
    }

    // finest fused feature with every coarser one brought to full size
    let mut parts = Vec::with_capacity(fused_all.len());
    for (i, &f) in fused_all.iter().enumerate().rev() {
        parts.push(net.up_times(f, fused_all.len() - 1 - i)?);
    }
    let mut z = if parts.len() == 1 {
        parts[0]
    } else {
        net.g.concat(&parts)?
    };
    if config.use_attention {
        z = net.channel_attention(z, "final.channel")?;
        z = net.spatial_attention(z, "final.spatial")?;
    }
    density.push(net.conv(z, "final.den", 3)?);
    if config.use_localization_head {
        localization.push(net.conv(z, "final.loc", 3)?);
    }
    let embedding = if config.use_association_head {
        Some((
            net.conv(cur[0], "assoc.embed", 3)?,
            net.conv(prev[0], "assoc.embed", 3)?,
        ))
    } else {
        None
    };
    Ok(ForwardOutput {
        density,
        localization,
        embedding,
        gates: net.gates,
    })
}
