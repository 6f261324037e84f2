//! Parameter counting from declared shapes alone, without allocating weights.

use serde::Serialize;

use super::config::{EncoderConfig, Variant, FRONTEND_CHANNELS};
use super::frontend::frontend_out_len;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamEntry {
    pub name: String,
    /// `None` for the frontend.
    pub block: Option<usize>,
    /// `frontend`, `attn`, `conv`, `local`, `ffn` or `norm`.
    pub component: &'static str,
    pub kind: ParamKind,
    pub rows: usize,
    pub cols: usize,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub weights: usize,
    pub biases: usize,
    pub norm: usize,
    pub total: usize,
}

impl Counts {
    fn add(&mut self, e: &ParamEntry) {
        let n = e.count;
        match e.kind {
            ParamKind::Weight => self.weights += n,
            ParamKind::Bias => self.biases += n,
            ParamKind::Norm => self.norm += n,
        }
        self.total += n;
    }

    fn of<'a>(entries: impl IntoIterator<Item = &'a ParamEntry>) -> Self {
        let mut c = Counts::default();
        for e in entries {
            c.add(e);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComponentCount {
    pub component: &'static str,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockCount {
    pub block: usize,
    pub components: Vec<ComponentCount>,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamTable {
    pub variant: Variant,
    pub total: Counts,
    pub frontend: Counts,
    pub blocks: Vec<BlockCount>,
    pub matrices: Vec<ParamEntry>,
}

impl ParamTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

struct Builder {
    block: Option<usize>,
    out: Vec<ParamEntry>,
}

impl Builder {
    fn push(&mut self, component: &'static str, name: String, kind: ParamKind, rows: usize, cols: usize) {
        let name = match self.block {
            Some(b) => format!("block{b}.{name}"),
            None => format!("frontend.{name}"),
        };
        self.out.push(ParamEntry {
            name,
            block: self.block,
            component,
            kind,
            rows,
            cols,
            count: rows * cols,
        });
    }

    fn norm(&mut self, prefix: &str, d: usize) {
        self.push("norm", format!("{prefix}.gamma"), ParamKind::Norm, 1, d);
        self.push("norm", format!("{prefix}.beta"), ParamKind::Norm, 1, d);
    }

    fn synth(&mut self, component: &'static str, prefix: &str, cfg: &EncoderConfig, w2_cols: usize) {
        let (d, dk) = (cfg.d, cfg.head_dim());
        for i in 0..cfg.h {
            self.push(component, format!("{prefix}.head{i}.w1"), ParamKind::Weight, d, dk);
            self.push(
                component,
                format!("{prefix}.head{i}.w2"),
                ParamKind::Weight,
                dk,
                w2_cols,
            );
            self.push(component, format!("{prefix}.head{i}.w3"), ParamKind::Weight, d, dk);
        }
        self.push(component, format!("{prefix}.wo"), ParamKind::Weight, d, d);
    }
}

/// Every trainable matrix the config declares, in the same order as
/// [`EncoderParams`](super::EncoderParams) visits them.
pub fn param_shapes(cfg: &EncoderConfig) -> Result<Vec<ParamEntry>> {
    cfg.validate()?;
    let (d, dk, ch) = (cfg.d, cfg.head_dim(), FRONTEND_CHANNELS);
    let mut b = Builder {
        block: None,
        out: Vec::new(),
    };
    use ParamKind::*;

    b.push("frontend", "conv1".into(), Weight, ch, 9);
    b.push("frontend", "conv1_bias".into(), Bias, 1, ch);
    b.push("frontend", "conv2".into(), Weight, ch, ch * 9);
    b.push("frontend", "conv2_bias".into(), Bias, 1, ch);
    b.push(
        "frontend",
        "proj".into(),
        Weight,
        ch * frontend_out_len(cfg.feat_dim),
        d,
    );
    b.push("frontend", "proj_bias".into(), Bias, 1, d);

    for block in 0..cfg.n_blocks {
        b.block = Some(block);
        match cfg.variant {
            Variant::Sa | Variant::Ha => {
                for i in 0..cfg.h {
                    for w in ["wq", "wk", "wv"] {
                        b.push("attn", format!("attn.head{i}.{w}"), Weight, d, dk);
                    }
                }
                b.push("attn", "attn.wo".into(), Weight, d, d);
            }
            Variant::Dsa => b.synth("attn", "attn", cfg, cfg.t_max),
            Variant::Ldsa => b.synth("attn", "attn", cfg, cfg.c),
        }
        b.norm("norm1", d);
        if cfg.variant == Variant::Ha {
            b.synth("local", "local", cfg, cfg.c);
        } else {
            let k = cfg.conv_kernel;
            b.push("conv", "conv.pointwise_in".into(), Weight, d, 2 * d);
            b.push("conv", "conv.pointwise_in_bias".into(), Bias, 1, 2 * d);
            b.push("conv", "conv.depthwise".into(), Weight, k, d);
            b.push("conv", "conv.depthwise_bias".into(), Bias, 1, d);
            b.push("conv", "conv.norm.gamma".into(), Norm, 1, d);
            b.push("conv", "conv.norm.beta".into(), Norm, 1, d);
            b.push("conv", "conv.pointwise_out".into(), Weight, d, d);
            b.push("conv", "conv.pointwise_out_bias".into(), Bias, 1, d);
        }
        b.norm("norm2", d);
        b.push("ffn", "ffn.w_a".into(), Weight, d, cfg.ffn_inner);
        b.push("ffn", "ffn.b_a".into(), Bias, 1, cfg.ffn_inner);
        b.push("ffn", "ffn.w_b".into(), Weight, cfg.ffn_inner, d);
        b.push("ffn", "ffn.b_b".into(), Bias, 1, d);
        b.norm("norm3", d);
    }
    Ok(b.out)
}

pub fn count_params(cfg: &EncoderConfig) -> Result<ParamTable> {
    let matrices = param_shapes(cfg)?;
    let frontend = Counts::of(matrices.iter().filter(|e| e.block.is_none()));
    let blocks = (0..cfg.n_blocks)
        .map(|block| {
            let entries: Vec<&ParamEntry> = matrices.iter().filter(|e| e.block == Some(block)).collect();
            let mut components: Vec<ComponentCount> = Vec::new();
            for e in &entries {
                match components.iter_mut().find(|c| c.component == e.component) {
                    Some(c) => c.counts.add(e),
                    None => components.push(ComponentCount {
                        component: e.component,
                        counts: Counts::of([*e]),
                    }),
                }
            }
            BlockCount {
                block,
                components,
                counts: Counts::of(entries),
            }
        })
        .collect();
    let total = Counts::of(&matrices);
    Ok(ParamTable {
        variant: cfg.variant,
        total,
        frontend,
        blocks,
        matrices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderParams;
    use crate::numerics::Rng;
    use crate::params::Parameters;

    fn component(table: &ParamTable, block: usize, name: &str) -> Counts {
        table.blocks[block]
            .components
            .iter()
            .find(|c| c.component == name)
            .map(|c| c.counts)
            .unwrap_or_default()
    }

    #[test]
    fn single_head_ldsa_layer() {
        let cfg = EncoderConfig {
            h: 1,
            n_blocks: 1,
            ..EncoderConfig::full(Variant::Ldsa)
        };
        let table = count_params(&cfg).unwrap();
        let sizes: Vec<(String, usize)> = table
            .matrices
            .iter()
            .filter(|e| e.component == "attn")
            .map(|e| (e.name.clone(), e.count))
            .collect();
        assert_eq!(
            sizes,
            vec![
                ("block0.attn.head0.w1".to_string(), 102400),
                ("block0.attn.head0.w2".to_string(), 9920),
                ("block0.attn.head0.w3".to_string(), 102400),
                ("block0.attn.wo".to_string(), 102400),
            ]
        );
        assert_eq!(component(&table, 0, "attn").weights, 317120);
    }

    #[test]
    fn multi_head_ldsa_matches_conv_module() {
        for (d, h, c) in [(320, 4, 15), (320, 1, 15), (64, 8, 15), (320, 4, 31), (12, 3, 5)] {
            let ha = count_params(&EncoderConfig {
                d,
                h,
                c,
                conv_kernel: c,
                ffn_inner: 4 * d,
                ..EncoderConfig::full(Variant::Ha)
            })
            .unwrap();
            let sa = count_params(&EncoderConfig {
                d,
                h,
                c,
                conv_kernel: c,
                ffn_inner: 4 * d,
                ..EncoderConfig::full(Variant::Sa)
            })
            .unwrap();
            let local = component(&ha, 0, "local").weights;
            let conv = component(&sa, 0, "conv").weights;
            assert_eq!(local, 3 * d * d + c * d, "d={d} h={h} c={c}");
            assert_eq!(conv, 3 * d * d + c * d);
            let w2: usize = ha
                .matrices
                .iter()
                .filter(|e| e.block == Some(0) && e.name.starts_with("block0.local") && e.name.ends_with("w2"))
                .map(|e| e.count)
                .sum();
            assert_eq!(w2, d * c);
            for (hb, sb) in ha.blocks.iter().zip(&sa.blocks) {
                assert_eq!(hb.counts.weights, sb.counts.weights);
            }
            assert_eq!(ha.total.weights, sa.total.weights);
            // Only bias and norm bookkeeping differ.
            assert_ne!(ha.total.total, sa.total.total);
        }
    }

    #[test]
    fn full_sized_parity() {
        let ha = count_params(&EncoderConfig::full(Variant::Ha)).unwrap();
        let sa = count_params(&EncoderConfig {
            conv_kernel: 15,
            ..EncoderConfig::full(Variant::Sa)
        })
        .unwrap();
        assert_eq!(component(&ha, 0, "local").weights, 3 * 320 * 320 + 15 * 320);
        assert_eq!(component(&ha, 0, "local").weights, 312000);
        assert_eq!(component(&sa, 0, "conv").weights, 312000);
        assert_eq!(ha.blocks.len(), 12);
        assert_eq!(ha.total.weights, sa.total.weights);
        let ldsa = count_params(&EncoderConfig::full(Variant::Ldsa)).unwrap();
        let w2: usize = ldsa
            .matrices
            .iter()
            .filter(|e| e.block == Some(0) && e.name.ends_with("w2"))
            .map(|e| e.count)
            .sum();
        assert_eq!(w2, 9920);
    }

    #[test]
    fn totals_add_up() {
        for v in Variant::ALL {
            let table = count_params(&EncoderConfig::full(v)).unwrap();
            let blocks: usize = table.blocks.iter().map(|b| b.counts.total).sum();
            assert_eq!(table.frontend.total + blocks, table.total.total);
            for b in &table.blocks {
                let parts: usize = b.components.iter().map(|c| c.counts.total).sum();
                assert_eq!(parts, b.counts.total);
                let c = b.counts;
                assert_eq!(c.weights + c.biases + c.norm, c.total);
            }
        }
    }

    #[test]
    fn matches_instantiated_parameters() {
        let mut rng = Rng::new(1);
        for v in Variant::ALL {
            let cfg = EncoderConfig::tiny(v);
            let p = EncoderParams::init(&cfg, &mut rng).unwrap();
            let declared = param_shapes(&cfg).unwrap();
            let mut actual = Vec::new();
            p.visit("", &mut |name, m| actual.push((name, m.shape())));
            let declared: Vec<(String, (usize, usize))> =
                declared.into_iter().map(|e| (e.name, (e.rows, e.cols))).collect();
            assert_eq!(actual, declared, "{v:?}");
            assert_eq!(p.num_scalars(), count_params(&cfg).unwrap().total.total);
        }
    }

    #[test]
    fn deterministic_json() {
        let cfg = EncoderConfig::tiny(Variant::Ha);
        let a = count_params(&cfg).unwrap().to_json();
        assert_eq!(a, count_params(&cfg).unwrap().to_json());
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["variant"], "ha");
        assert!(v["total"]["weights"].as_u64().unwrap() > 0);
    }
}
