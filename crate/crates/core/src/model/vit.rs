//! Transformer classification head operating on backbone feature maps.

use candle_core::{IndexOp, Tensor};

use super::config::ModelConfig;
use super::layers::{all_finite, softmax_last_dim, LayerNorm, Linear};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Flattened feature-map patches, batched as (B, N_p, P²·D_f).
#[derive(Debug, Clone)]
pub struct PatchSequence(pub Tensor);

impl PatchSequence {
    pub fn num_patches(&self) -> Result<usize> {
        Ok(self.0.dims3()?.1)
    }
}

/// Cuts a (B, D_f, H_f, W_f) feature map into P×P blocks.
///
/// Row `k` of each sequence is the block at raster position `k`
/// (`k = block_row·(W_f/P) + block_col`), flattened in (row, column,
/// channel) order. With `P = 1` this is a plain spatial flatten.
pub fn patchify(features: &Tensor, patch_size: usize) -> Result<PatchSequence> {
    let (b, d, h, w) = features.dims4()?;
    if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
        return Err(Error::Precondition(format!(
            "patch size P={patch_size} does not divide the feature map (H_f={h}, W_f={w})"
        )));
    }
    let p = patch_size;
    let (gh, gw) = (h / p, w / p);
    let seq = features
        .reshape(vec![b, d, gh, p, gw, p])?
        .permute(vec![0, 2, 4, 3, 5, 1])?
        .contiguous()?
        .reshape((b, gh * gw, p * p * d))?;
    Ok(PatchSequence(seq))
}

/// Linear patch projection `E_p`, class token and learned position embeddings.
#[derive(Debug, Clone)]
pub struct PatchEmbedding {
    projection: candle_core::Var,
    cls_token: candle_core::Var,
    position: candle_core::Var,
}

impl PatchEmbedding {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let (k, dp, np) = (cfg.patch_dim(), cfg.embed_dim, cfg.num_patches());
        Ok(Self {
            projection: store.normal("vit.embed.projection", &[k, dp], (1.0 / k as f64).sqrt())?,
            cls_token: store.normal("vit.embed.cls_token", &[dp], 0.02)?,
            position: store.normal("vit.embed.position", &[np + 1, dp], 0.02)?,
        })
    }

    pub fn from_parts(projection: &Tensor, cls_token: &Tensor, position: &Tensor) -> Result<Self> {
        let (k, dp) = projection.dims2()?;
        let (rows, dp2) = position.dims2()?;
        if cls_token.dims1()? != dp || dp2 != dp || rows < 1 || k == 0 {
            return Err(Error::Config(format!(
                "embedding shapes disagree: E_p {:?}, cls {:?}, E_pos {:?}",
                projection.dims(),
                cls_token.dims(),
                position.dims()
            )));
        }
        Ok(Self {
            projection: candle_core::Var::from_tensor(projection)?,
            cls_token: candle_core::Var::from_tensor(cls_token)?,
            position: candle_core::Var::from_tensor(position)?,
        })
    }

    pub fn position(&self) -> &Tensor {
        self.position.as_tensor()
    }

    /// Returns `{cls_token, f_p·E_p} + E_pos` of shape (B, N_p+1, D_p).
    pub fn embed(&self, patches: &PatchSequence) -> Result<Tensor> {
        let (b, np, k) = patches.0.dims3()?;
        let (pk, dp) = self.projection.dims2()?;
        let rows = self.position.dims2()?.0;
        if k != pk || np + 1 != rows {
            return Err(Error::Config(format!(
                "patch sequence {np}x{k} does not fit E_p {pk}x{dp} / E_pos with {rows} rows"
            )));
        }
        let tokens = patches.0.broadcast_matmul(self.projection.as_tensor())?;
        let cls = self.cls_token.reshape((1, 1, dp))?.broadcast_as((b, 1, dp))?;
        let seq = Tensor::cat(&[&cls, &tokens], 1)?;
        Ok(seq.broadcast_add(self.position.as_tensor())?)
    }
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    num_heads: usize,
}

impl EncoderBlock {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let (d, hidden) = (cfg.embed_dim, cfg.mlp_hidden());
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d)?,
            qkv: Linear::new(store, &format!("{name}.attn.qkv"), d, 3 * d, 0.02, true)?,
            proj: Linear::new(store, &format!("{name}.attn.proj"), d, d, 0.02, true)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d)?,
            fc1: Linear::new(store, &format!("{name}.mlp.fc1"), d, hidden, 0.02, true)?,
            fc2: Linear::new(store, &format!("{name}.mlp.fc2"), hidden, d, 0.02, true)?,
            num_heads: cfg.num_heads,
        })
    }

    fn attention(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let h = self.num_heads;
        let dh = d / h;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape(vec![b, t, 3, h, dh])?
            .permute(vec![2, 0, 3, 1, 4])?;
        let q = qkv.i(0)?.contiguous()?;
        let k = qkv.i(1)?.contiguous()?;
        let v = qkv.i(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?;
        let attn = softmax_last_dim(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, t, d))?;
        self.proj.forward(&out)
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let x = (x + self.attention(&self.ln1.forward(x)?)?)?;
        let mlp = self.fc2.forward(&self.fc1.forward(&self.ln2.forward(&x)?)?.gelu_erf()?)?;
        x + mlp
    }
}

/// Stack of pre-norm transformer blocks.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    blocks: Vec<EncoderBlock>,
}

impl TransformerEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let blocks = (0..cfg.num_blocks)
            .map(|i| EncoderBlock::new(store, &format!("vit.blocks.{i}"), cfg))
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `x ← x + MHA(LN(x)); x ← x + MLP(LN(x))` per block; shape preserved.
    pub fn encode(&self, seq: &Tensor) -> Result<Tensor> {
        let mut x = seq.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(&x)?;
            if !all_finite(&x)? {
                return Err(Error::Numeric(format!(
                    "non-finite activations after transformer block {i}"
                )));
            }
        }
        Ok(x)
    }
}

/// Fully connected readout of the class-token row.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    fc: Linear,
}

impl ClassifierHead {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, num_classes: usize) -> Result<Self> {
        Ok(Self {
            fc: Linear::new(store, name, in_dim, num_classes, 0.02, true)?,
        })
    }

    pub fn linear(&self) -> &Linear {
        &self.fc
    }

    /// `h = W·encoded[0] + b` for a (B, T, D_p) encoder output.
    pub fn classify(&self, encoded: &Tensor) -> Result<Tensor> {
        let cls = encoded.i((.., 0, ..))?;
        Ok(self.fc.forward(&cls)?)
    }

    /// Logits from an already pooled (B, D) representation.
    pub fn classify_pooled(&self, pooled: &Tensor) -> Result<Tensor> {
        Ok(self.fc.forward(pooled)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn ramp(shape: (usize, usize, usize, usize)) -> Tensor {
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        Tensor::arange(0f64, n as f64, &Device::Cpu)
            .unwrap()
            .reshape(shape)
            .unwrap()
    }

    #[test]
    fn patch_counts() {
        let f = Tensor::zeros((1, 64, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(patchify(&f, 4).unwrap().0.dims(), &[1, 16, 1024]);
        assert_eq!(patchify(&f, 1).unwrap().0.dims(), &[1, 256, 64]);
        let err = patchify(&f, 5).unwrap_err().to_string();
        assert!(err.contains("P=5") && err.contains("H_f=16") && err.contains("W_f=16"), "{err}");
    }

    #[test]
    fn patch_rows_follow_raster_block_order() {
        // D=2, 4x4 map, P=2: compare against direct indexing
        let f = ramp((1, 2, 4, 4));
        let seq = patchify(&f, 2).unwrap().0.to_vec3::<f64>().unwrap();
        let fv = f.squeeze(0).unwrap().to_vec3::<f64>().unwrap();
        for k in 0..4 {
            let (bi, bj) = (k / 2, k % 2);
            let mut expected = Vec::new();
            for r in 0..2 {
                for c in 0..2 {
                    for ch in 0..2 {
                        expected.push(fv[ch][bi * 2 + r][bj * 2 + c]);
                    }
                }
            }
            assert_eq!(seq[0][k], expected, "block {k}");
        }
    }

    #[test]
    fn empty_encoder_is_identity() {
        let enc = TransformerEncoder { blocks: vec![] };
        let x = ramp((1, 1, 3, 4)).squeeze(0).unwrap();
        let y = enc.encode(&x).unwrap();
        assert_eq!(x.to_vec3::<f64>().unwrap(), y.to_vec3::<f64>().unwrap());
    }

    #[test]
    fn embedding_of_zero_patches_is_position_plus_cls() {
        let mut store = ParamStore::new(3, DType::F64, Device::Cpu);
        let cfg = ModelConfig {
            input_height: 64,
            input_width: 64,
            backbone_stage_channels: vec![4, 4, 4, 8],
            patch_size: 1,
            embed_dim: 8,
            num_heads: 2,
            ..ModelConfig::default()
        };
        let emb = PatchEmbedding::new(&mut store, &cfg).unwrap();
        let zeros = Tensor::zeros((1, 16, 8), DType::F64, &Device::Cpu).unwrap();
        let out = emb.embed(&PatchSequence(zeros)).unwrap().squeeze(0).unwrap();
        assert_eq!(out.dims(), &[17, 8]);
        let pos = store.get("vit.embed.position").unwrap().to_vec2::<f64>().unwrap();
        let cls = store.get("vit.embed.cls_token").unwrap().to_vec1::<f64>().unwrap();
        let out = out.to_vec2::<f64>().unwrap();
        for j in 0..8 {
            assert_eq!(out[0][j], cls[j] + pos[0][j]);
        }
        for k in 1..17 {
            assert_eq!(out[k], pos[k]);
        }
    }
}
