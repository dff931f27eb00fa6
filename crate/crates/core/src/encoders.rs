//! Text and image encoders projecting into a shared unit-sphere space.
//!
//! Text: token rows are looked up, optionally combined with positional rows,
//! mean-pooled, projected and L2-normalized. Image: the raster is cut into
//! `P×P` patches, each flattened patch goes through a linear layer and ReLU,
//! patches are mean-pooled, then a hidden layer with ReLU, a projection and
//! L2 normalization follow.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const UNK_ID: usize = 0;
pub const UNK_TOKEN: &str = "<unk>";

/// Initial temperature; the similarity multiplier starts at `1 / 0.07`.
pub const INIT_TEMPERATURE: f64 = 0.07;
/// Upper clamp on the similarity multiplier `exp(log_scale)`.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

/// RGB image with channel values in `[0, 1]`, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Pixels {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextMode {
    /// Order-free mean of token rows.
    #[default]
    Bow,
    /// Token rows are combined with per-position rows before pooling.
    Positional,
}

impl TextMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TextMode::Bow => "bow",
            TextMode::Positional => "positional",
        }
    }

    fn code(self) -> u8 {
        match self {
            TextMode::Bow => 0,
            TextMode::Positional => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(TextMode::Bow),
            1 => Ok(TextMode::Positional),
            other => Err(Error::Format(format!("unknown text mode byte {other}"))),
        }
    }
}

impl fmt::Display for TextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Token ↔ id map. Id 0 is `<unk>`; the remaining ids follow the
/// lexicographic order of the tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = texts.into_iter().flat_map(words).collect();
        let tokens = std::iter::once(UNK_TOKEN.to_owned()).chain(set).collect();
        Self::from_tokens(tokens).expect("sorted unique tokens form a valid vocabulary")
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Format("vocabulary must start with <unk>".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Maps text to ids, unknown words to `<unk>`, truncated to `max_len`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    words(text).iter().take(max_len).map(|w| vocab.id(w)).collect()
}

/// Sizes of both encoders, excluding the vocabulary size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderDims {
    pub d_text: usize,
    pub max_len: usize,
    pub d_hidden: usize,
    pub d_embed: usize,
    pub patch: usize,
    pub image_size: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            d_text: 64,
            max_len: 16,
            d_hidden: 128,
            d_embed: 32,
            patch: 8,
            image_size: 32,
        }
    }
}

impl EncoderDims {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("d_text", self.d_text),
            ("max_len", self.max_len),
            ("d_hidden", self.d_hidden),
            ("d_embed", self.d_embed),
            ("patch", self.patch),
            ("image_size", self.image_size),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.image_size.is_multiple_of(self.patch) {
            return Err(Error::InvalidConfig(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch
            )));
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        3 * self.patch * self.patch
    }

    pub fn patches_per_image(&self) -> usize {
        (self.image_size / self.patch).pow(2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoderParams {
    pub token_table: Tensor,
    pub positional_table: Tensor,
    pub proj_text: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoderParams {
    pub patch_proj: Tensor,
    pub hidden: Tensor,
    pub proj_image: Tensor,
}

/// Every learnable weight. `exp(log_scale)` multiplies cosine similarities.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub text: TextEncoderParams,
    pub image: ImageEncoderParams,
    pub log_scale: f64,
}

pub const PARAM_NAMES: [&str; 7] = [
    "token_table",
    "positional_table",
    "proj_text",
    "patch_proj",
    "hidden",
    "proj_image",
    "log_scale",
];

impl ModelParams {
    /// Draws every weight from `N(0, 1/√rows)` using one ChaCha8 stream seeded
    /// with `seed`, in [`PARAM_NAMES`] order.
    pub fn init(vocab_size: usize, dims: &EncoderDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        if vocab_size == 0 {
            return Err(Error::InvalidConfig("vocabulary size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gaussian = |rows: usize, cols: usize| -> Result<Tensor> {
            let std = 1.0 / (rows as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            Tensor::matrix(rows, cols, data)
        };
        Ok(Self {
            text: TextEncoderParams {
                token_table: gaussian(vocab_size, dims.d_text)?,
                positional_table: gaussian(dims.max_len, dims.d_text)?,
                proj_text: gaussian(dims.d_text, dims.d_embed)?,
            },
            image: ImageEncoderParams {
                patch_proj: gaussian(dims.patch_len(), dims.d_hidden)?,
                hidden: gaussian(dims.d_hidden, dims.d_hidden)?,
                proj_image: gaussian(dims.d_hidden, dims.d_embed)?,
            },
            log_scale: (1.0 / INIT_TEMPERATURE).ln(),
        })
    }

    pub fn logit_scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn clamp_log_scale(&mut self) {
        self.log_scale = self.log_scale.min(MAX_LOGIT_SCALE.ln());
    }

    pub fn vocab_size(&self) -> usize {
        self.text.token_table.rows()
    }

    pub fn dims(&self, patch: usize, image_size: usize) -> EncoderDims {
        EncoderDims {
            d_text: self.text.token_table.cols(),
            max_len: self.text.positional_table.rows(),
            d_hidden: self.image.hidden.rows(),
            d_embed: self.text.proj_text.cols(),
            patch,
            image_size,
        }
    }

    /// Weight tensors in [`PARAM_NAMES`] order, `log_scale` as a 1×1 tensor.
    pub fn tensors(&self) -> Vec<Tensor> {
        vec![
            self.text.token_table.clone(),
            self.text.positional_table.clone(),
            self.text.proj_text.clone(),
            self.image.patch_proj.clone(),
            self.image.hidden.clone(),
            self.image.proj_image.clone(),
            Tensor::scalar(self.log_scale),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.text.token_table.data_mut(),
            self.text.positional_table.data_mut(),
            self.text.proj_text.data_mut(),
            self.image.patch_proj.data_mut(),
            self.image.hidden.data_mut(),
            self.image.proj_image.data_mut(),
        ]
    }

    pub fn from_tensors(mut ts: Vec<Tensor>) -> Result<Self> {
        if ts.len() != PARAM_NAMES.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} tensors, got {}",
                PARAM_NAMES.len(),
                ts.len()
            )));
        }
        let log_scale = ts.pop().expect("len checked").data()[0];
        let mut it = ts.into_iter();
        let mut next = || it.next().expect("len checked");
        Ok(Self {
            text: TextEncoderParams {
                token_table: next(),
                positional_table: next(),
                proj_text: next(),
            },
            image: ImageEncoderParams {
                patch_proj: next(),
                hidden: next(),
                proj_image: next(),
            },
            log_scale,
        })
    }

    /// Raw little-endian bytes of every weight, for bitwise comparisons.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>())
            .collect()
    }
}

/// Text-encoder weights recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TextVars {
    pub token_table: Var,
    pub positional_table: Var,
    pub proj_text: Var,
}

impl TextVars {
    pub fn record(tape: &mut Tape, p: &TextEncoderParams, requires_grad: bool) -> Self {
        let mut leaf = |t: &Tensor| tape.leaf(t.clone().with_requires_grad(requires_grad));
        Self {
            token_table: leaf(&p.token_table),
            positional_table: leaf(&p.positional_table),
            proj_text: leaf(&p.proj_text),
        }
    }
}

/// Image-encoder weights recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ImageVars {
    pub patch_proj: Var,
    pub hidden: Var,
    pub proj_image: Var,
}

impl ImageVars {
    pub fn record(tape: &mut Tape, p: &ImageEncoderParams, requires_grad: bool) -> Self {
        let mut leaf = |t: &Tensor| tape.leaf(t.clone().with_requires_grad(requires_grad));
        Self {
            patch_proj: leaf(&p.patch_proj),
            hidden: leaf(&p.hidden),
            proj_image: leaf(&p.proj_image),
        }
    }
}

/// Records the text encoder for a batch of id lists; returns `N×d_e` unit rows.
pub fn text_forward(tape: &mut Tape, vars: &TextVars, captions: &[&[usize]], mode: TextMode) -> Result<Var> {
    if captions.is_empty() {
        return Err(Error::EmptyInput("caption batch"));
    }
    let max_len = tape.value(vars.positional_table)?.rows();
    let mut ids = Vec::new();
    let mut lengths = Vec::with_capacity(captions.len());
    for c in captions {
        if c.is_empty() {
            return Err(Error::EmptyInput("token ids"));
        }
        if c.len() > max_len {
            return Err(Error::shape(
                "encode_text",
                format!("{} tokens exceed the maximum length {max_len}", c.len()),
            ));
        }
        ids.extend_from_slice(c);
        lengths.push(c.len());
    }
    let mut rows = tape.embedding_lookup(vars.token_table, &ids)?;
    if mode == TextMode::Positional {
        let positions: Vec<usize> = lengths.iter().flat_map(|&l| 0..l).collect();
        let pos = tape.embedding_lookup(vars.positional_table, &positions)?;
        let summed = tape.add(rows, pos)?;
        // the ReLU keeps position information from averaging out in the pool
        rows = tape.relu(summed)?;
    }
    let pooled = tape.mean_pool_segments(rows, &lengths)?;
    let projected = tape.matmul(pooled, vars.proj_text)?;
    tape.l2_normalize_rows(projected)
}

/// Flattens an image into `(W/P)²` rows of `3·P·P` values. Patches are in
/// row-major patch order; inside a patch, pixels are row-major with
/// interleaved channels.
pub fn patchify(pixels: &Pixels, patch: usize) -> Result<Vec<f64>> {
    if pixels.width != pixels.height
        || patch == 0
        || !pixels.width.is_multiple_of(patch)
        || pixels.data.len() != pixels.width * pixels.height * 3
    {
        return Err(Error::shape(
            "encode_image",
            format!(
                "{}×{} image with {} values cannot be cut into {patch}-pixel patches",
                pixels.width,
                pixels.height,
                pixels.data.len()
            ),
        ));
    }
    let w = pixels.width;
    let per_side = w / patch;
    let mut out = Vec::with_capacity(pixels.data.len());
    for py in 0..per_side {
        for px in 0..per_side {
            for y in py * patch..(py + 1) * patch {
                let start = (y * w + px * patch) * 3;
                out.extend_from_slice(&pixels.data[start..start + patch * 3]);
            }
        }
    }
    Ok(out)
}

/// Records the image encoder over pre-flattened patch rows
/// (`N·patches_per_image × 3P²`); returns `N×d_e` unit rows.
pub fn image_forward(tape: &mut Tape, vars: &ImageVars, patches: Tensor, patches_per_image: usize) -> Result<Var> {
    let rows = patches.rows();
    if patches_per_image == 0 || !rows.is_multiple_of(patches_per_image) {
        return Err(Error::shape(
            "encode_image",
            format!("{rows} patch rows are not a multiple of {patches_per_image}"),
        ));
    }
    let x = tape.constant(patches);
    let h = tape.matmul(x, vars.patch_proj)?;
    let h = tape.relu(h)?;
    let pooled = tape.mean_pool_segments(h, &vec![patches_per_image; rows / patches_per_image])?;
    let h = tape.matmul(pooled, vars.hidden)?;
    let h = tape.relu(h)?;
    let projected = tape.matmul(h, vars.proj_image)?;
    tape.l2_normalize_rows(projected)
}

/// Stacks the patch rows of several images into one tensor.
pub fn patch_batch(images: &[&Pixels], dims: &EncoderDims) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::EmptyInput("image batch"));
    }
    let mut data = Vec::with_capacity(images.len() * dims.image_size * dims.image_size * 3);
    for img in images {
        if img.width != dims.image_size {
            return Err(Error::shape(
                "encode_image",
                format!(
                    "expected {0}×{0} images, got {1}×{2}",
                    dims.image_size, img.width, img.height
                ),
            ));
        }
        data.extend(patchify(img, dims.patch)?);
    }
    Tensor::matrix(images.len() * dims.patches_per_image(), dims.patch_len(), data)
}

fn unit_rows(tape: &Tape, v: Var) -> Result<Vec<Vec<f64>>> {
    let t = tape.value(v)?;
    Ok((0..t.rows()).map(|r| t.row(r).to_vec()).collect())
}

/// A trained (or freshly initialized) model with its tokenizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipModel {
    pub params: ModelParams,
    pub mode: TextMode,
    pub vocab: Vocabulary,
    pub dims: EncoderDims,
}

impl ClipModel {
    pub fn init(vocab: Vocabulary, mode: TextMode, dims: EncoderDims, seed: u64) -> Result<Self> {
        let params = ModelParams::init(vocab.len(), &dims, seed)?;
        Ok(Self {
            params,
            mode,
            vocab,
            dims,
        })
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        tokenize(text, &self.vocab, self.dims.max_len)
    }

    pub fn encode_text_ids(&self, ids: &[usize]) -> Result<Vec<f64>> {
        Ok(self.encode_text_id_batch(&[ids])?.remove(0))
    }

    pub fn encode_text_id_batch(&self, captions: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let vars = TextVars::record(&mut tape, &self.params.text, false);
        let out = text_forward(&mut tape, &vars, captions, self.mode)?;
        unit_rows(&tape, out)
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        let ids = self.tokenize(text);
        if ids.is_empty() {
            return Err(Error::EmptyPrompt(text.to_owned()));
        }
        self.encode_text_ids(&ids)
    }

    pub fn encode_image(&self, pixels: &Pixels) -> Result<Vec<f64>> {
        Ok(self.encode_image_batch(&[pixels])?.remove(0))
    }

    /// Encodes images in chunks; results equal per-image encoding bitwise.
    pub fn encode_image_batch(&self, images: &[&Pixels]) -> Result<Vec<Vec<f64>>> {
        const CHUNK: usize = 256;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let mut tape = Tape::new();
            let vars = ImageVars::record(&mut tape, &self.params.image, false);
            let patches = patch_batch(chunk, &self.dims)?;
            let v = image_forward(&mut tape, &vars, patches, self.dims.patches_per_image())?;
            out.extend(unit_rows(&tape, v)?);
        }
        Ok(out)
    }
}

const CKPT_MAGIC: &[u8; 8] = b"CLIPCKP1";
const CKPT_VERSION: u32 = 1;

fn truncated(what: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |_| Error::Truncated(format!("checkpoint {what}"))
}

fn write_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.write_u32::<LittleEndian>(t.shape().len() as u32).unwrap();
    for &d in t.shape() {
        out.write_u32::<LittleEndian>(d as u32).unwrap();
    }
    for &v in t.data() {
        out.write_f64::<LittleEndian>(v).unwrap();
    }
}

fn read_tensor(r: &mut Cursor<&[u8]>, name: &str, expected: [usize; 2]) -> Result<Tensor> {
    let rank = r.read_u32::<LittleEndian>().map_err(truncated(name))? as usize;
    if rank != 2 {
        return Err(Error::Format(format!("{name} has rank {rank}, expected 2")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.read_u32::<LittleEndian>().map_err(truncated(name))? as usize);
    }
    if shape != expected {
        return Err(Error::Format(format!(
            "{name} has shape {shape:?}, header implies {expected:?}"
        )));
    }
    let n = expected[0] * expected[1];
    let mut data = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut data).map_err(truncated(name))?;
    Tensor::new(shape, data)
}

impl ClipModel {
    /// Serializes to the `CLIPCKP1` container.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let d = &self.dims;
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.write_u32::<LittleEndian>(CKPT_VERSION).unwrap();
        out.push(self.mode.code());
        for v in [
            self.vocab.len(),
            d.d_text,
            d.max_len,
            d.d_hidden,
            d.d_embed,
            d.patch,
            d.image_size,
        ] {
            out.write_u32::<LittleEndian>(v as u32).unwrap();
        }
        out.write_u32::<LittleEndian>(self.vocab.len() as u32).unwrap();
        for t in self.vocab.tokens() {
            out.write_u32::<LittleEndian>(t.len() as u32).unwrap();
            out.extend_from_slice(t.as_bytes());
        }
        for t in [
            &p.text.token_table,
            &p.text.positional_table,
            &p.text.proj_text,
            &p.image.patch_proj,
            &p.image.hidden,
            &p.image.proj_image,
        ] {
            write_tensor(&mut out, t);
        }
        out.write_f64::<LittleEndian>(p.log_scale).unwrap();
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CKPT_MAGIC.len() {
            return Err(Error::Truncated("checkpoint magic".into()));
        }
        if &bytes[..8] != CKPT_MAGIC {
            return Err(Error::Format("not a CLIPCKP1 checkpoint (bad magic)".into()));
        }
        let mut r = Cursor::new(bytes);
        r.set_position(8);
        let version = r.read_u32::<LittleEndian>().map_err(truncated("version"))?;
        if version != CKPT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CKPT_VERSION,
            });
        }
        let mode = TextMode::from_code(r.read_u8().map_err(truncated("text mode"))?)?;
        let mut header = [0usize; 7];
        for h in &mut header {
            *h = r.read_u32::<LittleEndian>().map_err(truncated("header"))? as usize;
        }
        let [v, d_text, max_len, d_hidden, d_embed, patch, image_size] = header;
        let dims = EncoderDims {
            d_text,
            max_len,
            d_hidden,
            d_embed,
            patch,
            image_size,
        };
        dims.validate()
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

        let count = r.read_u32::<LittleEndian>().map_err(truncated("vocabulary"))? as usize;
        if count != v {
            return Err(Error::Format(format!(
                "vocabulary lists {count} tokens, header says {v}"
            )));
        }
        let mut tokens = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.read_u32::<LittleEndian>().map_err(truncated("vocabulary"))? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(truncated("vocabulary"))?;
            tokens.push(String::from_utf8(buf).map_err(|_| Error::Format("vocabulary token is not UTF-8".into()))?);
        }
        let vocab = Vocabulary::from_tokens(tokens)?;

        let shapes = [
            [v, d_text],
            [max_len, d_text],
            [d_text, d_embed],
            [dims.patch_len(), d_hidden],
            [d_hidden, d_hidden],
            [d_hidden, d_embed],
        ];
        let mut ts = Vec::with_capacity(7);
        for (name, shape) in PARAM_NAMES.iter().zip(shapes) {
            ts.push(read_tensor(&mut r, name, shape)?);
        }
        let log_scale = r.read_f64::<LittleEndian>().map_err(truncated("log_scale"))?;
        ts.push(Tensor::scalar(log_scale));
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            params: ModelParams::from_tensors(ts)?,
            mode,
            vocab,
            dims,
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
