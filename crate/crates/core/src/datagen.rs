//! Deterministic synthetic corpus of captioned shape images.
//!
//! Items are drawn from 4 shapes × 6 colors × 2 sizes × 2 backgrounds with a
//! small positional jitter. Splits: `train`, `test_iid` (same combo
//! distribution, disjoint items), `test_heldout` (only the held-out
//! shape/color pairs) and `test_shifted` (the `test_iid` scenes re-rendered
//! with pixel noise and, optionally, the background swapped).
//!
//! On disk a corpus is a `manifest.jsonl` plus one binary PPM per item.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoders::Pixels;
use crate::error::{Error, Result};

pub const IMAGE_SIZE: usize = 32;
pub const MAX_JITTER: i32 = 4;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

macro_rules! attribute_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }

            pub fn parse(s: &str) -> Option<Self> {
                match s { $($text => Some($name::$variant),)+ _ => None }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

attribute_enum!(Shape {
    Circle => "circle",
    Square => "square",
    Triangle => "triangle",
    Cross => "cross",
});

attribute_enum!(Color {
    Red => "red",
    Green => "green",
    Blue => "blue",
    Yellow => "yellow",
    Magenta => "magenta",
    Cyan => "cyan",
});

attribute_enum!(Size {
    Small => "small",
    Large => "large",
});

attribute_enum!(Background {
    Black => "black",
    White => "white",
});

impl Color {
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [255, 0, 0],
            Color::Green => [0, 255, 0],
            Color::Blue => [0, 0, 255],
            Color::Yellow => [255, 255, 0],
            Color::Magenta => [255, 0, 255],
            Color::Cyan => [0, 255, 255],
        }
    }
}

impl Size {
    /// Bounding extent of the shape in pixels.
    pub fn extent(self) -> f64 {
        match self {
            Size::Small => 10.0,
            Size::Large => 20.0,
        }
    }
}

impl Background {
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Background::Black => [0, 0, 0],
            Background::White => [255, 255, 255],
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            Background::Black => Background::White,
            Background::White => Background::Black,
        }
    }
}

/// Generative attributes of one synthetic image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
    pub background: Background,
    pub jitter: (i32, i32),
    pub seed: u64,
}

impl SceneSpec {
    pub fn combo(&self) -> (Shape, Color) {
        (self.shape, self.color)
    }
}

/// Zero-shot class name of a shape/color pair, e.g. `"red circle"`.
pub fn class_name(shape: Shape, color: Color) -> String {
    format!("{color} {shape}")
}

/// 8-bit RGB raster, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        let rgb = color.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, rgb }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.rgb[o], self.rgb[o + 1], self.rgb[o + 2]]
    }

    pub fn to_pixels(&self) -> Pixels {
        Pixels {
            width: self.width,
            height: self.height,
            data: self.rgb.iter().map(|&b| f64::from(b) / 255.0).collect(),
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Truncated("ppm header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the pixels
        pos += 1;
        if fields[0] != "P6" {
            return Err(Error::Format(format!("ppm magic {:?}", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("ppm header field {s:?}")))
        };
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("ppm maxval {maxval}")));
        }
        let need = width * height * 3;
        if bytes.len() < pos + need {
            return Err(Error::Truncated("ppm pixel block".into()));
        }
        Ok(Self {
            width,
            height,
            rgb: bytes[pos..pos + need].to_vec(),
        })
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_ppm(&bytes)
    }
}

fn inside(shape: Shape, dx: f64, dy: f64, extent: f64) -> bool {
    let half = extent / 2.0;
    match shape {
        Shape::Circle => dx * dx + dy * dy <= half * half,
        Shape::Square => dx.abs() <= half && dy.abs() <= half,
        Shape::Triangle => {
            // apex up, base at the bottom of the bounding box
            let depth = dy + half;
            (0.0..=extent).contains(&depth) && dx.abs() <= depth / 2.0
        }
        Shape::Cross => {
            let arm = extent / 6.0;
            (dx.abs() <= half && dy.abs() <= arm) || (dy.abs() <= half && dx.abs() <= arm)
        }
    }
}

/// Rasterizes a scene: background fill, then the filled shape centered at
/// `(size/2 + dx, size/2 + dy)`, sampling at pixel centers.
pub fn render(spec: &SceneSpec, size: usize) -> Raster {
    let mut r = Raster::filled(size, size, spec.background.rgb());
    let cx = size as f64 / 2.0 + f64::from(spec.jitter.0);
    let cy = size as f64 / 2.0 + f64::from(spec.jitter.1);
    let color = spec.color.rgb();
    let extent = spec.size.extent();
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if inside(spec.shape, dx, dy, extent) {
                let o = (y * size + x) * 3;
                r.rgb[o..o + 3].copy_from_slice(&color);
            }
        }
    }
    r
}

/// Attributes a caption mentions; `None` means unmentioned.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionedAttrs {
    pub shape: Option<Shape>,
    pub color: Option<Color>,
    pub size: Option<Size>,
    pub background: Option<Background>,
}

/// Caption template family. Slots: `{size}`, `{color}`, `{shape}`,
/// `{background}`.
pub const CAPTION_TEMPLATES: &[&str] = &[
    "a {size} {color} {shape} on a {background} background",
    "a {color} {shape}",
    "the {shape} is {color}",
    "a photo of a {color} {shape}",
    "an image of a {size} {color} {shape}",
    "a picture of a {color} {shape} on a {background} background",
];

fn fill_template(template: &str, spec: &SceneSpec) -> String {
    template
        .replace("{size}", spec.size.as_str())
        .replace("{color}", spec.color.as_str())
        .replace("{shape}", spec.shape.as_str())
        .replace("{background}", spec.background.as_str())
}

/// Index into [`CAPTION_TEMPLATES`] chosen by the scene's own seed.
pub fn caption_template_index(spec: &SceneSpec) -> usize {
    ChaCha8Rng::seed_from_u64(spec.seed).random_range(0..CAPTION_TEMPLATES.len())
}

pub fn caption(spec: &SceneSpec) -> String {
    fill_template(CAPTION_TEMPLATES[caption_template_index(spec)], spec)
}

/// Recovers the mentioned attributes of a caption produced by [`caption`].
pub fn parse_caption(text: &str) -> Option<MentionedAttrs> {
    let words: Vec<&str> = text.split_whitespace().collect();
    'templates: for template in CAPTION_TEMPLATES {
        let slots: Vec<&str> = template.split_whitespace().collect();
        if slots.len() != words.len() {
            continue;
        }
        let mut attrs = MentionedAttrs::default();
        for (slot, word) in slots.iter().zip(&words) {
            let ok = match *slot {
                "{size}" => Size::parse(word).map(|v| attrs.size = Some(v)).is_some(),
                "{color}" => Color::parse(word).map(|v| attrs.color = Some(v)).is_some(),
                "{shape}" => Shape::parse(word).map(|v| attrs.shape = Some(v)).is_some(),
                "{background}" => Background::parse(word).map(|v| attrs.background = Some(v)).is_some(),
                literal => literal == *word,
            };
            if !ok {
                continue 'templates;
            }
        }
        return Some(attrs);
    }
    None
}

/// True iff `candidate` matches every attribute `query` mentions.
pub fn relevance(query: &MentionedAttrs, candidate: &SceneSpec) -> bool {
    query.shape.is_none_or(|s| s == candidate.shape)
        && query.color.is_none_or(|c| c == candidate.color)
        && query.size.is_none_or(|s| s == candidate.size)
        && query.background.is_none_or(|b| b == candidate.background)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestIid,
    TestHeldout,
    TestShifted,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::TestIid, Split::TestHeldout, Split::TestShifted];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestIid => "test_iid",
            Split::TestHeldout => "test_heldout",
            Split::TestShifted => "test_shifted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|sp| sp.as_str() == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    pub noise_sigma: f64,
    pub swap_background: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub heldout: Vec<(Shape, Color)>,
    pub shift: ShiftConfig,
    pub image_size: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_train: 4096,
            n_test: 512,
            heldout: vec![
                (Shape::Triangle, Color::Magenta),
                (Shape::Circle, Color::Cyan),
                (Shape::Square, Color::Yellow),
                (Shape::Cross, Color::Green),
            ],
            shift: ShiftConfig {
                noise_sigma: 0.1,
                swap_background: true,
            },
            image_size: IMAGE_SIZE,
        }
    }
}

impl CorpusConfig {
    /// Shape/color pairs that appear in training, in enumeration order.
    pub fn trained_combos(&self) -> Vec<(Shape, Color)> {
        all_combos().into_iter().filter(|c| !self.heldout.contains(c)).collect()
    }
}

pub fn all_combos() -> Vec<(Shape, Color)> {
    Shape::ALL
        .iter()
        .flat_map(|&s| Color::ALL.iter().map(move |&c| (s, c)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: u64,
    pub path: String,
    pub caption: String,
    pub spec: SceneSpec,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test_iid: usize,
    pub test_heldout: usize,
    pub test_shifted: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestHeader {
    corpus_seed: u64,
    counts: SplitCounts,
}

/// Manifest entries plus their rasters (`rasters[i]` belongs to `entries[i]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub entries: Vec<CorpusEntry>,
    pub rasters: Vec<Raster>,
}

fn sample_spec(rng: &mut ChaCha8Rng, combos: &[(Shape, Color)]) -> SceneSpec {
    let (shape, color) = combos[rng.random_range(0..combos.len())];
    let size = Size::ALL[rng.random_range(0..Size::ALL.len())];
    let background = Background::ALL[rng.random_range(0..Background::ALL.len())];
    let dx = rng.random_range(-MAX_JITTER..=MAX_JITTER);
    let dy = rng.random_range(-MAX_JITTER..=MAX_JITTER);
    SceneSpec {
        shape,
        color,
        size,
        background,
        jitter: (dx, dy),
        seed: rng.next_u64(),
    }
}

fn add_noise(raster: &mut Raster, sigma: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(format!("noise sigma {sigma}: {e}")))?;
    for b in &mut raster.rgb {
        let v = (f64::from(*b) / 255.0 + normal.sample(rng)).clamp(0.0, 1.0);
        *b = (v * 255.0).round() as u8;
    }
    Ok(())
}

/// Builds the corpus in memory. Ids are dense from 0 in split order
/// train, test_iid, test_heldout, test_shifted.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    let all = all_combos();
    if config.heldout.is_empty() {
        return Err(Error::InvalidConfig("held-out combo list is empty".into()));
    }
    if let Some(bad) = config.heldout.iter().find(|c| !all.contains(c)) {
        return Err(Error::InvalidConfig(format!("unknown combo {bad:?}")));
    }
    let trained = config.trained_combos();
    if trained.is_empty() {
        return Err(Error::InvalidConfig(
            "every combo is held out; the training split would be empty".into(),
        ));
    }
    if config.n_train == 0 || config.n_test == 0 {
        return Err(Error::InvalidConfig("split sizes must be at least 1".into()));
    }
    if config.image_size < 2 * (MAX_JITTER as usize) + 20 {
        return Err(Error::InvalidConfig(format!(
            "image size {} cannot contain a jittered large shape",
            config.image_size
        )));
    }
    if !(config.shift.noise_sigma >= 0.0 && config.shift.noise_sigma.is_finite()) {
        return Err(Error::InvalidConfig("noise sigma must be finite and ≥ 0".into()));
    }
    let mut heldout = config.heldout.clone();
    heldout.sort();
    heldout.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut corpus = Corpus {
        seed: config.seed,
        entries: Vec::new(),
        rasters: Vec::new(),
    };
    let push = |corpus: &mut Corpus, spec: SceneSpec, split: Split, raster: Raster| {
        let id = corpus.entries.len() as u64;
        corpus.entries.push(CorpusEntry {
            id,
            path: format!("images/{id:06}.ppm"),
            caption: caption(&spec),
            spec,
            split,
        });
        corpus.rasters.push(raster);
    };

    for _ in 0..config.n_train {
        let spec = sample_spec(&mut rng, &trained);
        push(&mut corpus, spec, Split::Train, render(&spec, config.image_size));
    }
    let mut iid_specs = Vec::with_capacity(config.n_test);
    for _ in 0..config.n_test {
        let spec = sample_spec(&mut rng, &trained);
        iid_specs.push(spec);
        push(&mut corpus, spec, Split::TestIid, render(&spec, config.image_size));
    }
    for _ in 0..config.n_test {
        let spec = sample_spec(&mut rng, &heldout);
        push(&mut corpus, spec, Split::TestHeldout, render(&spec, config.image_size));
    }
    for spec in iid_specs {
        let mut shifted = spec;
        if config.shift.swap_background {
            shifted.background = shifted.background.swapped();
        }
        let mut raster = render(&shifted, config.image_size);
        if config.shift.noise_sigma > 0.0 {
            add_noise(&mut raster, config.shift.noise_sigma, &mut rng)?;
        }
        push(&mut corpus, shifted, Split::TestShifted, raster);
    }
    Ok(corpus)
}

impl Corpus {
    pub fn counts(&self) -> SplitCounts {
        let n = |s| self.entries.iter().filter(|e| e.split == s).count();
        SplitCounts {
            train: n(Split::Train),
            test_iid: n(Split::TestIid),
            test_heldout: n(Split::TestHeldout),
            test_shifted: n(Split::TestShifted),
        }
    }

    /// Indices (into `entries`) of one split, in id order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].split == split)
            .collect()
    }

    /// Manifest bytes: header line then one JSON object per entry.
    pub fn manifest_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let header = ManifestHeader {
            corpus_seed: self.seed,
            counts: self.counts(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        for (e, r) in self.entries.iter().zip(&self.rasters) {
            let p = dir.join(&e.path);
            fs::write(&p, r.to_ppm()).map_err(|err| Error::io(&p, err))?;
        }
        let p = dir.join(MANIFEST_FILE);
        let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        f.write_all(&self.manifest_bytes()?).map_err(|e| Error::io(&p, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (seed, entries) = read_manifest(dir)?;
        let rasters = entries
            .iter()
            .map(|e| Raster::read_ppm(&dir.join(&e.path)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { seed, entries, rasters })
    }
}

/// Reads `manifest.jsonl` without touching the rasters.
pub fn read_manifest(dir: &Path) -> Result<(u64, Vec<CorpusEntry>)> {
    let p = dir.join(MANIFEST_FILE);
    let f = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
    let mut lines = BufReader::new(f).lines();
    let header: ManifestHeader = match lines.next() {
        Some(l) => serde_json::from_str(&l.map_err(|e| Error::io(&p, e))?)?,
        None => return Err(Error::Truncated("manifest has no header line".into())),
    };
    let mut entries = Vec::new();
    for l in lines {
        let l = l.map_err(|e| Error::io(&p, e))?;
        if !l.trim().is_empty() {
            entries.push(serde_json::from_str::<CorpusEntry>(&l)?);
        }
    }
    let mut counts = BTreeMap::new();
    for e in &entries {
        *counts.entry(e.split).or_insert(0usize) += 1;
    }
    let c = |s| counts.get(&s).copied().unwrap_or(0);
    let found = SplitCounts {
        train: c(Split::Train),
        test_iid: c(Split::TestIid),
        test_heldout: c(Split::TestHeldout),
        test_shifted: c(Split::TestShifted),
    };
    if found != header.counts {
        return Err(Error::Format(format!(
            "manifest header counts {:?} disagree with entries {found:?}",
            header.counts
        )));
    }
    Ok((header.corpus_seed, entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(shape: Shape, color: Color, size: Size, bg: Background) -> SceneSpec {
        SceneSpec {
            shape,
            color,
            size,
            background: bg,
            jitter: (0, 0),
            seed: 0,
        }
    }

    fn small_config() -> CorpusConfig {
        CorpusConfig {
            n_train: 64,
            n_test: 16,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn corner_pixel_is_background() {
        let r = render(&spec(Shape::Circle, Color::Red, Size::Large, Background::Black), 32);
        assert_eq!(r.pixel(0, 0), [0, 0, 0]);
        assert_eq!(r.pixel(16, 16), [255, 0, 0]);
    }

    #[test]
    fn render_is_pure() {
        let s = SceneSpec {
            jitter: (3, -4),
            ..spec(Shape::Triangle, Color::Cyan, Size::Small, Background::White)
        };
        assert_eq!(render(&s, 32), render(&s, 32));
    }

    #[test]
    fn jittered_large_shapes_stay_inside() {
        for &shape in Shape::ALL {
            for dx in [-MAX_JITTER, MAX_JITTER] {
                for dy in [-MAX_JITTER, MAX_JITTER] {
                    let s = SceneSpec {
                        jitter: (dx, dy),
                        ..spec(shape, Color::Red, Size::Large, Background::Black)
                    };
                    let r = render(&s, 32);
                    for i in 0..32 {
                        for edge in [r.pixel(i, 0), r.pixel(0, i), r.pixel(i, 31), r.pixel(31, i)] {
                            assert_eq!(edge, [0, 0, 0], "{shape} touches the border");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn caption_substitution_examples() {
        let s = spec(Shape::Circle, Color::Red, Size::Small, Background::White);
        assert_eq!(
            fill_template(CAPTION_TEMPLATES[0], &s),
            "a small red circle on a white background"
        );
        assert_eq!(fill_template(CAPTION_TEMPLATES[1], &s), "a red circle");
        assert_eq!(caption(&s), caption(&s));
    }

    #[test]
    fn relevance_examples() {
        let q = MentionedAttrs {
            color: Some(Color::Red),
            shape: Some(Shape::Circle),
            ..Default::default()
        };
        assert!(relevance(
            &q,
            &spec(Shape::Circle, Color::Red, Size::Large, Background::Black)
        ));
        assert!(!relevance(
            &q,
            &spec(Shape::Square, Color::Red, Size::Large, Background::Black)
        ));
        assert!(relevance(
            &MentionedAttrs::default(),
            &spec(Shape::Cross, Color::Blue, Size::Small, Background::White)
        ));
    }

    #[test]
    fn every_template_round_trips_through_the_parser() {
        let s = spec(Shape::Cross, Color::Magenta, Size::Large, Background::White);
        for t in CAPTION_TEMPLATES {
            let attrs = parse_caption(&fill_template(t, &s)).unwrap();
            assert_eq!(attrs.shape, t.contains("{shape}").then_some(s.shape));
            assert_eq!(attrs.color, t.contains("{color}").then_some(s.color));
            assert_eq!(attrs.size, t.contains("{size}").then_some(s.size));
            assert_eq!(attrs.background, t.contains("{background}").then_some(s.background));
        }
    }

    #[test]
    fn heldout_combos_never_train() {
        let c = generate_corpus(&small_config()).unwrap();
        let heldout = small_config().heldout;
        for e in c.entries.iter().filter(|e| e.split == Split::Train) {
            assert!(!heldout.contains(&e.spec.combo()));
            assert!(!(e.caption.contains("triangle") && e.caption.contains("magenta")));
        }
        for e in c.entries.iter().filter(|e| e.split == Split::TestHeldout) {
            assert!(heldout.contains(&e.spec.combo()));
        }
    }

    #[test]
    fn all_heldout_is_an_error() {
        let cfg = CorpusConfig {
            heldout: all_combos(),
            ..small_config()
        };
        assert!(matches!(generate_corpus(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn identity_shift_reproduces_iid_rasters() {
        let cfg = CorpusConfig {
            shift: ShiftConfig {
                noise_sigma: 0.0,
                swap_background: false,
            },
            ..small_config()
        };
        let c = generate_corpus(&cfg).unwrap();
        let iid = c.split_indices(Split::TestIid);
        let shifted = c.split_indices(Split::TestShifted);
        assert_eq!(iid.len(), shifted.len());
        for (a, b) in iid.into_iter().zip(shifted) {
            assert_eq!(c.rasters[a], c.rasters[b]);
            assert_eq!(c.entries[a].caption, c.entries[b].caption);
        }
    }

    #[test]
    fn ppm_round_trip_and_bad_magic() {
        let r = render(&spec(Shape::Square, Color::Blue, Size::Small, Background::White), 32);
        assert_eq!(Raster::from_ppm(&r.to_ppm()).unwrap(), r);
        let mut bad = r.to_ppm();
        bad[1] = b'3';
        assert!(matches!(Raster::from_ppm(&bad), Err(Error::Format(_))));
        let short = &r.to_ppm()[..100];
        assert!(matches!(Raster::from_ppm(short), Err(Error::Truncated(_))));
    }

    #[test]
    fn written_corpus_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_corpus(&small_config()).unwrap();
        c.write(dir.path()).unwrap();
        assert_eq!(Corpus::load(dir.path()).unwrap(), c);
    }
}
