use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pack::MusicFeaturePack;
use crate::blob;
use crate::cau::sequence::ItemRecord;
use crate::cau::{CauCatalog, CauSequence};
use crate::error::{Error, Result};
use crate::motion::MotionClip;

/// A song's features with its expert CAU annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Song {
    pub name: String,
    pub pack: MusicFeaturePack,
    pub sequence: CauSequence,
}

/// A continuous dance performance with the frames where one CAU hands over to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct Performance {
    pub name: String,
    pub clip: MotionClip,
    pub junctions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub catalog: CauCatalog,
    pub songs: Vec<Song>,
    pub performances: Vec<Performance>,
}

#[derive(Serialize, Deserialize)]
struct CorpusIndex {
    format: String,
    version: u32,
    catalog: PathBuf,
    #[serde(default)]
    song: Vec<SongRecord>,
    #[serde(default)]
    performance: Vec<PerformanceRecord>,
}

#[derive(Serialize, Deserialize)]
struct SongRecord {
    name: String,
    music: PathBuf,
    item: Vec<ItemRecord>,
}

#[derive(Serialize, Deserialize)]
struct PerformanceRecord {
    name: String,
    motion: PathBuf,
    junctions: Vec<usize>,
}

const CORPUS_FORMAT: &str = "dancegen-corpus";
pub const INDEX_FILE: &str = "corpus.toml";

impl Corpus {
    /// Writes the index, catalog, music packs and performances under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        blob::ensure_dir(dir)?;
        let catalog = PathBuf::from("catalog.toml");
        self.catalog.save(&dir.join(&catalog))?;
        let mut song = Vec::with_capacity(self.songs.len());
        for s in &self.songs {
            let music = PathBuf::from("music").join(&s.name);
            s.pack.save(&dir.join(&music))?;
            song.push(SongRecord {
                name: s.name.clone(),
                music,
                item: s.sequence.to_records(&self.catalog)?,
            });
        }
        let mut performance = Vec::with_capacity(self.performances.len());
        for p in &self.performances {
            let motion = PathBuf::from("performances").join(format!("{}.toml", p.name));
            p.clip.save(&dir.join(&motion))?;
            performance.push(PerformanceRecord {
                name: p.name.clone(),
                motion,
                junctions: p.junctions.clone(),
            });
        }
        blob::write_toml(
            &dir.join(INDEX_FILE),
            &CorpusIndex {
                format: CORPUS_FORMAT.into(),
                version: 1,
                catalog,
                song,
                performance,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let index: CorpusIndex = blob::read_toml(&path)?;
        if index.format != CORPUS_FORMAT {
            return Err(Error::parse(&path, format!("unknown format `{}`", index.format)));
        }
        let catalog = CauCatalog::load(&dir.join(&index.catalog))?;
        let mut songs = Vec::with_capacity(index.song.len());
        for s in index.song {
            let pack = MusicFeaturePack::load(&dir.join(&s.music))?;
            let sequence = CauSequence::from_records(&s.item, &catalog)?;
            songs.push(Song {
                name: s.name,
                pack,
                sequence,
            });
        }
        let mut performances = Vec::with_capacity(index.performance.len());
        for p in index.performance {
            let clip = MotionClip::load(&dir.join(&p.motion))?;
            if let Some(&j) = p.junctions.iter().find(|&&j| j == 0 || j >= clip.len()) {
                return Err(Error::Validation(format!(
                    "performance `{}` has junction {j} outside its {} frames",
                    p.name,
                    clip.len()
                )));
            }
            performances.push(Performance {
                name: p.name,
                clip,
                junctions: p.junctions,
            });
        }
        Ok(Self {
            catalog,
            songs,
            performances,
        })
    }
}
