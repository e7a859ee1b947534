//! Dataset ingest, checkpoints and metrics output.
//!
//! # Dataset CSV
//!
//! ```text
//! # size=48x48                      <- optional; source image width×height
//! usage,pixels,neutral,happiness,...
//! Training,0 12 255 ...,7,1,2,0,0,0,0,0
//! ```
//!
//! * `usage` is `Training`, `PublicTest` or `PrivateTest`, mapped to the
//!   train, validation and test splits. Splits are taken from the file as is.
//! * `pixels` holds `width × height` space-separated integers in `0..=255`,
//!   row-major. Without the metadata line the size comes from
//!   [`IngestOptions::source_size`] (48×48 by default).
//! * One integer vote-count column per category of the [`EmotionSet`], matched
//!   by name (case-insensitive). Other columns, such as `unknown` or `NF`, are
//!   dropped before outlier rejection.
//!
//! Images are resized bilinearly to the network input size and scaled to
//! `[0, 1]` by dividing by 255.

mod checkpoint;
mod metrics;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::resize_bilinear;
use crate::error::{Error, Result};
use crate::labels::{EmotionSet, LabelDistribution, VoteCounts, DEFAULT_OUTLIER_THRESHOLD};
use crate::net::Tensor;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use metrics::{
    confusion_csv, metrics_json, write_metrics, EpochRecord, RunMetrics, TrialRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    /// FER usage token for this split.
    pub fn usage_token(&self) -> &'static str {
        match self {
            Self::Train => "Training",
            Self::Validation => "PublicTest",
            Self::Test => "PrivateTest",
        }
    }

    pub fn from_usage(token: &str) -> Option<Self> {
        match token.trim() {
            "Training" => Some(Self::Train),
            "PublicTest" => Some(Self::Validation),
            "PrivateTest" => Some(Self::Test),
            _ => None,
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Self::Train),
            "validation" | "val" | "publictest" => Ok(Self::Validation),
            "test" | "privatetest" => Ok(Self::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Validation => "validation",
            Self::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    /// `(1, size, size)` image with values in `[0, 1]`.
    pub image: Tensor,
    /// Votes as read, before outlier rejection.
    pub votes: VoteCounts,
    pub dist: LabelDistribution,
    pub split: Split,
}

impl DatasetItem {
    pub fn majority(&self) -> usize {
        self.dist.majority_class()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub emotions: EmotionSet,
    pub items: Vec<DatasetItem>,
    /// Items dropped because outlier rejection removed every vote.
    pub dropped_unusable: usize,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&DatasetItem> {
        self.items.iter().filter(|i| i.split == split).collect()
    }

    pub fn image_size(&self) -> Option<usize> {
        self.items.first().map(|i| i.image.chw()[1])
    }

    /// SHA-256 over images, votes, distributions and splits, in order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in self.emotions.names() {
            h.update(name.as_bytes());
            h.update([0]);
        }
        for item in &self.items {
            h.update([item.split as u8]);
            for v in item.votes.counts() {
                h.update(v.to_le_bytes());
            }
            for p in item.dist.probs() {
                h.update(p.to_le_bytes());
            }
            for x in item.image.data() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Builds the cleaned distribution for one vote tally. `None` means the item
/// is unusable and should be dropped.
pub fn distribution_for(
    votes: &VoteCounts,
    threshold: u32,
    keep_unusable: bool,
) -> Result<Option<LabelDistribution>> {
    match votes.reject_outliers(threshold) {
        Ok(clean) => clean.normalize().map(Some),
        Err(Error::UnusableItem) if keep_unusable && votes.total() > 0 => {
            votes.normalize().map(Some)
        }
        Err(Error::UnusableItem) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Network input size; images are resized to `image_size × image_size`.
    pub image_size: usize,
    /// Source `(width, height)` when the file carries no `# size=` line.
    pub source_size: (usize, usize),
    pub outlier_threshold: u32,
    /// Keep items whose votes are all rejected, using their raw votes.
    pub keep_unusable: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            image_size: 64,
            source_size: (48, 48),
            outlier_threshold: DEFAULT_OUTLIER_THRESHOLD,
            keep_unusable: false,
        }
    }
}

/// Parses `WxH` (or a single number for square images).
pub fn parse_size(s: &str) -> Option<(usize, usize)> {
    let s = s.trim();
    match s.split_once(['x', 'X', '×']) {
        Some((w, h)) => Some((w.trim().parse().ok()?, h.trim().parse().ok()?)),
        None => s.parse().ok().map(|n| (n, n)),
    }
}

fn parse_metadata(line: &str) -> Option<(usize, usize)> {
    line.trim_start_matches('#')
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("size=").and_then(parse_size))
}

struct Columns {
    usage: Option<usize>,
    pixels: Option<usize>,
    votes: Vec<usize>,
}

fn resolve_columns(
    header: &csv::StringRecord,
    emotions: &EmotionSet,
    path: &Path,
    line: u64,
) -> Result<Columns> {
    let mut usage = None;
    let mut pixels = None;
    let mut votes = vec![None; emotions.len()];
    let mut ignored = Vec::new();
    for (i, name) in header.iter().enumerate() {
        let name = name.trim();
        if name.eq_ignore_ascii_case("usage") {
            usage = Some(i);
        } else if name.eq_ignore_ascii_case("pixels") {
            pixels = Some(i);
        } else if let Some(k) = emotions.index_of(name) {
            votes[k] = Some(i);
        } else {
            ignored.push(name.to_string());
        }
    }
    if !ignored.is_empty() {
        info!(
            "{}: ignoring {} column(s) outside the emotion set: {}",
            path.display(),
            ignored.len(),
            ignored.join(", ")
        );
    }
    let votes = votes
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            c.ok_or_else(|| Error::Csv {
                path: path.to_path_buf(),
                line,
                detail: format!("missing vote column `{}`", emotions.names()[k]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Columns {
        usage,
        pixels,
        votes,
    })
}

/// A parsed CSV row before images are converted.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteRow {
    pub line: u64,
    pub split: Option<Split>,
    pub pixels: Option<Vec<u8>>,
    pub votes: VoteCounts,
}

/// Reads the CSV and returns its rows plus the source size declared in the
/// metadata line, if any. `require_images` makes `usage` and `pixels`
/// mandatory.
/// Parsed rows plus the `(width, height)` from a `# size=` line, if any.
pub type VoteTable = (Vec<VoteRow>, Option<(usize, usize)>);

pub fn read_vote_rows(
    path: &Path,
    emotions: &EmotionSet,
    require_images: bool,
) -> Result<VoteTable> {
    let text = fs::read_to_string(path)?;
    let csv_err = |line: u64, detail: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let (declared, body, offset) = match text.split_once('\n') {
        Some((first, rest)) if first.trim_start().starts_with('#') => {
            let size = parse_metadata(first).ok_or_else(|| {
                csv_err(1, format!("unreadable metadata line `{}`", first.trim()))
            })?;
            (Some(size), rest, 1)
        }
        _ => (None, text.as_str(), 0),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| csv_err(offset + 1, e.to_string()))?
        .clone();
    let cols = resolve_columns(&header, emotions, path, offset + 1)?;
    if require_images && (cols.usage.is_none() || cols.pixels.is_none()) {
        return Err(csv_err(
            offset + 1,
            "header needs `usage` and `pixels` columns".into(),
        ));
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0) + offset;
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0) + offset;
        let field = |i: usize| record.get(i).unwrap_or("");
        let split = match cols.usage {
            Some(i) => Some(
                Split::from_usage(field(i))
                    .ok_or_else(|| csv_err(line, format!("unknown usage token `{}`", field(i))))?,
            ),
            None => None,
        };
        let pixels = match cols.pixels {
            Some(i) => Some(
                field(i)
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<u8>().map_err(|_| {
                            csv_err(
                                line,
                                format!("pixel value `{t}` is not an integer in 0..=255"),
                            )
                        })
                    })
                    .collect::<Result<Vec<u8>>>()?,
            ),
            None => None,
        };
        let counts = cols
            .votes
            .iter()
            .map(|&i| {
                field(i).parse::<u32>().map_err(|_| {
                    csv_err(
                        line,
                        format!("vote count `{}` is not a non-negative integer", field(i)),
                    )
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        rows.push(VoteRow {
            line,
            split,
            pixels,
            votes: VoteCounts::from_counts(counts),
        });
    }
    Ok((rows, declared))
}

/// Loads a dataset CSV: parses images, resizes them, and turns votes into
/// cleaned label distributions.
pub fn load_dataset(
    path: impl AsRef<Path>,
    emotions: &EmotionSet,
    options: &IngestOptions,
) -> Result<Dataset> {
    let path = path.as_ref();
    if options.image_size == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    let (rows, declared) = read_vote_rows(path, emotions, true)?;
    let (src_w, src_h) = declared.unwrap_or(options.source_size);
    let mut items = Vec::with_capacity(rows.len());
    let mut dropped = 0;
    for row in rows {
        let pixels = row.pixels.expect("pixels required");
        if pixels.len() != src_w * src_h {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                line: row.line,
                detail: format!(
                    "{} pixels, expected {src_w}×{src_h} = {}",
                    pixels.len(),
                    src_w * src_h
                ),
            });
        }
        let Some(dist) =
            distribution_for(&row.votes, options.outlier_threshold, options.keep_unusable)
                .map_err(|e| Error::Csv {
                    path: path.to_path_buf(),
                    line: row.line,
                    detail: e.to_string(),
                })?
        else {
            dropped += 1;
            continue;
        };
        let scaled: Vec<f64> = pixels.iter().map(|&v| f64::from(v) / 255.0).collect();
        let n = options.image_size;
        let resized = resize_bilinear(&scaled, src_h, src_w, n, n);
        items.push(DatasetItem {
            image: Tensor::image(n, n, resized)?,
            votes: row.votes,
            dist,
            split: row.split.expect("usage required"),
        });
    }
    if dropped > 0 {
        info!(
            "{}: dropped {dropped} item(s) with no votes left after outlier rejection",
            path.display()
        );
    }
    Ok(Dataset {
        emotions: emotions.clone(),
        items,
        dropped_unusable: dropped,
    })
}

/// Writes a dataset in the CSV schema above. Pixel values are rounded to
/// integers after scaling by 255.
pub fn write_dataset_csv(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let size = dataset.image_size().unwrap_or(0);
    let mut out = format!("# size={size}x{size}\nusage,pixels");
    for name in dataset.emotions.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for item in &dataset.items {
        out.push_str(item.split.usage_token());
        out.push(',');
        let pixels: Vec<String> = item
            .image
            .data()
            .iter()
            .map(|v| ((v * 255.0).round().clamp(0.0, 255.0) as u8).to_string())
            .collect();
        out.push_str(&pixels.join(" "));
        for c in item.votes.counts() {
            out.push(',');
            out.push_str(&c.to_string());
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Writes to a sibling temporary file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| format!(".{}.tmp", n.to_string_lossy()))
        .unwrap_or_else(|| ".tmp".into());
    tmp.set_file_name(name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn pixels(n: usize) -> String {
        (0..n)
            .map(|i| (i % 256).to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn header() -> String {
        format!("usage,pixels,{}", EmotionSet::ferplus().names().join(","))
    }

    #[test]
    fn loads_and_resizes() {
        let csv = format!(
            "{}\nTraining,{},7,1,2,0,0,0,0,0\nPrivateTest,{},0,10,0,0,0,0,0,0\n",
            header(),
            pixels(48 * 48),
            pixels(48 * 48)
        );
        let f = write_tmp(&csv);
        let ds = load_dataset(f.path(), &EmotionSet::ferplus(), &IngestOptions::default()).unwrap();
        assert_eq!(ds.items.len(), 2);
        assert_eq!(ds.items[0].image.shape(), &[1, 64, 64]);
        let p = ds.items[0].dist.probs();
        assert_eq!(p[0], 7.0 / 9.0);
        assert_eq!(p[1], 0.0);
        assert_eq!(p[2], 2.0 / 9.0);
        assert_eq!(ds.items[0].split, Split::Train);
        assert_eq!(ds.items[1].split, Split::Test);
        assert_eq!(ds.items[0].votes.counts()[1], 1);
    }

    #[test]
    fn pixel_count_mismatch_names_the_line() {
        let csv = format!(
            "{}\nTraining,{},10,0,0,0,0,0,0,0\nTraining,{},10,0,0,0,0,0,0,0\n",
            header(),
            pixels(48 * 48),
            pixels(100)
        );
        let f = write_tmp(&csv);
        let err =
            load_dataset(f.path(), &EmotionSet::ferplus(), &IngestOptions::default()).unwrap_err();
        match err {
            Error::Csv { line, detail, .. } => {
                assert_eq!(line, 3);
                assert!(detail.contains("100 pixels"), "{detail}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_usage_is_an_error() {
        let csv = format!("{}\nHoldout,{},10,0,0,0,0,0,0,0\n", header(), pixels(4));
        let f = write_tmp(&format!("# size=2x2\n{csv}"));
        let err =
            load_dataset(f.path(), &EmotionSet::ferplus(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err}");
    }

    #[test]
    fn metadata_and_extra_columns() {
        let csv = format!(
            "# size=2x2\n{},unknown,NF\nPublicTest,0 255 255 0,1,1,1,1,1,1,1,1,2,0\nTraining,0 0 0 0,0,5,5,0,0,0,0,0,0,0\n",
            header()
        );
        let f = write_tmp(&csv);
        let opts = IngestOptions {
            image_size: 2,
            ..Default::default()
        };
        let ds = load_dataset(f.path(), &EmotionSet::ferplus(), &opts).unwrap();
        assert_eq!(ds.dropped_unusable, 1);
        assert_eq!(ds.items.len(), 1);
        assert_eq!(ds.items[0].dist.probs()[1], 0.5);

        let keep = IngestOptions {
            keep_unusable: true,
            ..opts
        };
        let ds = load_dataset(f.path(), &EmotionSet::ferplus(), &keep).unwrap();
        assert_eq!(ds.items.len(), 2);
        assert_eq!(ds.items[0].dist, LabelDistribution::uniform(8));
        assert_eq!(ds.items[0].image.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn missing_vote_column_is_reported() {
        let f = write_tmp("usage,pixels,neutral\nTraining,0,1\n");
        assert!(matches!(
            load_dataset(f.path(), &EmotionSet::ferplus(), &IngestOptions::default()),
            Err(Error::Csv { line: 1, .. })
        ));
    }

    #[test]
    fn ingest_is_deterministic() {
        let csv = format!(
            "{}\nTraining,{},3,3,4,0,0,0,0,0\n",
            header(),
            pixels(48 * 48)
        );
        let f = write_tmp(&csv);
        let a = load_dataset(f.path(), &EmotionSet::ferplus(), &IngestOptions::default()).unwrap();
        let b = load_dataset(f.path(), &EmotionSet::ferplus(), &IngestOptions::default()).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a, b);
    }

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("48x48"), Some((48, 48)));
        assert_eq!(parse_size("16"), Some((16, 16)));
        assert_eq!(parse_size("3X5"), Some((3, 5)));
        assert_eq!(parse_size("abc"), None);
    }
}
