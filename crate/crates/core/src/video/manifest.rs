//! Dataset manifest: a CSV with header `video_id,path,label,frames` whose
//! paths point at frame directories (PPM/PGM sequences) or STT1 tensor
//! files of shape [F, 3, H, W]. Relative paths resolve against the
//! manifest's directory.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{atomic_write, Tensor};
use crate::video::image::read_pnm_file;
use crate::video::VideoSource;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub path: String,
    pub label: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against (the manifest's parent).
    pub base: PathBuf,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<DatasetManifest> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))?;
        {
            let headers = reader
                .headers()
                .map_err(|e| Error::Format(e.to_string()))?;
            let expect = ["video_id", "path", "label", "frames"];
            if headers.iter().collect::<Vec<_>>() != expect {
                return Err(Error::Format(format!(
                    "manifest header {:?}, expected {:?}",
                    headers, expect
                )));
            }
        }
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Format(e.to_string()))?;
            if record.len() != 4 {
                return Err(Error::Format(format!(
                    "manifest row has {} fields: {:?}",
                    record.len(),
                    record
                )));
            }
            let parse_num = |s: &str, what: &str| -> Result<usize> {
                s.parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad {} {:?} in manifest", what, s)))
            };
            entries.push(ManifestEntry {
                video_id: record[0].to_string(),
                path: record[1].to_string(),
                label: parse_num(&record[2], "label")?,
                frames: parse_num(&record[3], "frame count")?,
            });
        }
        Ok(DatasetManifest {
            entries,
            base: path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["video_id", "path", "label", "frames"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for e in &self.entries {
            writer
                .write_record([
                    e.video_id.as_str(),
                    e.path.as_str(),
                    &e.label.to_string(),
                    &e.frames.to_string(),
                ])
                .map_err(|err| Error::Format(err.to_string()))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Format(e.to_string()))?;
        atomic_write(path, &bytes)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Load the frames behind one entry. A directory is read as a sorted
    /// PPM/PGM sequence; a file is read as an STT1 tensor [F, 3, H, W].
    pub fn load_video(&self, entry: &ManifestEntry) -> Result<VideoSource> {
        let path = self.resolve(entry);
        let frames = if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("ppm") | Some("pgm")
                    )
                })
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Format(format!(
                    "no .ppm/.pgm frames in {}",
                    path.display()
                )));
            }
            files
                .iter()
                .map(|f| read_pnm_file(f))
                .collect::<Result<Vec<_>>>()?
        } else {
            let stack = Tensor::load_stt(&path)?;
            let shape = stack.shape().to_vec();
            if shape.len() != 4 || shape[1] != 3 {
                return Err(Error::Format(format!(
                    "{}: expected [F, 3, H, W] tensor, got {:?}",
                    path.display(),
                    shape
                )));
            }
            let (h, w) = (shape[2], shape[3]);
            let frame_len = 3 * h * w;
            stack
                .data()
                .chunks_exact(frame_len)
                .map(|chunk| Tensor::from_vec(&[3, h, w], chunk.to_vec()))
                .collect::<Result<Vec<_>>>()?
        };
        let video = VideoSource::new(entry.video_id.clone(), frames, Some(entry.label))?;
        if video.frame_count() != entry.frames {
            return Err(Error::Format(format!(
                "{}: manifest says {} frames, found {}",
                entry.video_id,
                entry.frames,
                video.frame_count()
            )));
        }
        Ok(video)
    }
}
