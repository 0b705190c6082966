use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::blob;
use crate::error::{Error, Result};
use crate::motion::{MotionClip, Skeleton};

pub const SOD: usize = 0;
pub const EOD: usize = 1;
pub const NIL: usize = 2;
/// Number of reserved tokens ahead of the first CAU.
pub const SPECIALS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Sod,
    Eod,
    Nil,
    Cau,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CatalogEntry {
    pub name: String,
    pub kind: TokenKind,
    pub beats: usize,
    /// Clip path relative to the catalog file, for CAU tokens.
    pub motion: Option<PathBuf>,
    pub clip: Option<Arc<MotionClip>>,
}

impl CatalogEntry {
    pub fn special(name: &str, kind: TokenKind) -> Self {
        let beats = usize::from(kind == TokenKind::Nil);
        Self {
            name: name.into(),
            kind,
            beats,
            motion: None,
            clip: None,
        }
    }

    pub fn cau(name: impl Into<String>, beats: usize, motion: impl Into<PathBuf>, clip: MotionClip) -> Self {
        Self {
            name: name.into(),
            kind: TokenKind::Cau,
            beats,
            motion: Some(motion.into()),
            clip: Some(Arc::new(clip)),
        }
    }
}

/// Token vocabulary: SOD, EOD, NIL at ids 0, 1, 2, then one entry per CAU.
#[derive(Clone, Debug, PartialEq)]
pub struct CauCatalog {
    entries: Vec<CatalogEntry>,
    by_name: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    format: String,
    version: u32,
    token: Vec<TokenRecord>,
}

#[derive(Serialize, Deserialize)]
struct TokenRecord {
    id: usize,
    name: String,
    kind: TokenKind,
    beats: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    motion: Option<PathBuf>,
}

const CATALOG_FORMAT: &str = "dancegen-catalog";

impl CauCatalog {
    /// Validates a full entry list (specials included, in id order).
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self> {
        let expected = [(SOD, TokenKind::Sod), (EOD, TokenKind::Eod), (NIL, TokenKind::Nil)];
        for (id, kind) in expected {
            match entries.get(id) {
                Some(e) if e.kind == kind => {}
                _ => return Err(Error::Validation(format!("token id {id} must be the {kind:?} special"))),
            }
        }
        let mut by_name = HashMap::new();
        let mut reference: Option<(Arc<Skeleton>, f64)> = None;
        for (id, e) in entries.iter().enumerate() {
            if by_name.insert(e.name.clone(), id).is_some() {
                return Err(Error::Validation(format!("duplicate token name `{}`", e.name)));
            }
            match e.kind {
                TokenKind::Sod | TokenKind::Eod if e.beats != 0 => {
                    return Err(Error::Validation(format!("token `{}` must span 0 beats", e.name)))
                }
                TokenKind::Nil if e.beats != 1 => {
                    return Err(Error::Validation(format!("token `{}` must span 1 beat", e.name)))
                }
                TokenKind::Cau => {
                    if id < SPECIALS {
                        return Err(Error::Validation(format!("CAU `{}` uses reserved id {id}", e.name)));
                    }
                    if e.beats == 0 {
                        return Err(Error::Validation(format!("CAU `{}` has zero beat length", e.name)));
                    }
                    let clip = e
                        .clip
                        .as_ref()
                        .ok_or_else(|| Error::Validation(format!("CAU `{}` has no motion clip", e.name)))?;
                    match &reference {
                        None => reference = Some((clip.skeleton().clone(), clip.fps())),
                        Some((sk, fps)) => {
                            if **sk != **clip.skeleton() || *fps != clip.fps() {
                                return Err(Error::Validation(format!(
                                    "CAU `{}` clip disagrees with the catalog's skeleton or rate",
                                    e.name
                                )));
                            }
                        }
                    }
                }
                _ if id >= SPECIALS => {
                    return Err(Error::Validation(format!("special token `{}` outside reserved ids", e.name)))
                }
                _ => {}
            }
        }
        Ok(Self { entries, by_name })
    }

    /// Builds a catalog from CAU entries only, prepending the specials.
    pub fn from_caus(caus: Vec<CatalogEntry>) -> Result<Self> {
        let mut entries = vec![
            CatalogEntry::special("SOD", TokenKind::Sod),
            CatalogEntry::special("EOD", TokenKind::Eod),
            CatalogEntry::special("NIL", TokenKind::Nil),
        ];
        entries.extend(caus);
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: CatalogFile = blob::read_toml(path)?;
        if file.format != CATALOG_FORMAT {
            return Err(Error::parse(path, format!("unknown format `{}`", file.format)));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let mut slots: Vec<Option<CatalogEntry>> = vec![None; file.token.len()];
        for t in file.token {
            if t.id >= slots.len() {
                return Err(Error::Validation(format!(
                    "token `{}` has id {} beyond the vocabulary size {}",
                    t.name,
                    t.id,
                    slots.len()
                )));
            }
            if slots[t.id].is_some() {
                return Err(Error::Validation(format!("duplicate token id {} (`{}`)", t.id, t.name)));
            }
            let clip = match (&t.kind, &t.motion) {
                (TokenKind::Cau, Some(rel)) => {
                    let clip_path = base.join(rel);
                    if !clip_path.exists() {
                        return Err(Error::Validation(format!(
                            "token `{}` references missing clip {}",
                            t.name,
                            clip_path.display()
                        )));
                    }
                    let clip = MotionClip::load(&clip_path)
                        .map_err(|e| Error::Validation(format!("token `{}`: {e}", t.name)))?;
                    Some(Arc::new(clip))
                }
                _ => None,
            };
            slots[t.id] = Some(CatalogEntry {
                name: t.name,
                kind: t.kind,
                beats: t.beats,
                motion: t.motion,
                clip,
            });
        }
        let entries = slots.into_iter().map(|s| s.expect("ids are a permutation")).collect();
        Self::new(entries)
    }

    /// Writes the catalog manifest and every CAU clip at its relative path.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut token = Vec::with_capacity(self.entries.len());
        for (id, e) in self.entries.iter().enumerate() {
            if let (Some(rel), Some(clip)) = (&e.motion, &e.clip) {
                clip.save(&base.join(rel))?;
            }
            token.push(TokenRecord {
                id,
                name: e.name.clone(),
                kind: e.kind,
                beats: e.beats,
                motion: e.motion.clone(),
            });
        }
        blob::ensure_dir(base)?;
        blob::write_toml(
            path,
            &CatalogFile {
                format: CATALOG_FORMAT.into(),
                version: 1,
                token,
            },
        )
    }

    /// Vocabulary size `V`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> Result<&CatalogEntry> {
        self.entries.get(id).ok_or_else(|| Error::Validation(format!("unknown token id {id}")))
    }

    pub fn id_of(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Validation(format!("unknown token `{name}`")))
    }

    pub fn name(&self, id: usize) -> Result<&str> {
        Ok(&self.entry(id)?.name)
    }

    pub fn kind(&self, id: usize) -> Result<TokenKind> {
        Ok(self.entry(id)?.kind)
    }

    pub fn beats(&self, id: usize) -> Result<usize> {
        Ok(self.entry(id)?.beats)
    }

    pub fn clip(&self, id: usize) -> Result<&Arc<MotionClip>> {
        let e = self.entry(id)?;
        e.clip
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("token `{}` has no motion", e.name)))
    }

    pub fn cau_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (SPECIALS..self.entries.len()).filter(|&i| self.entries[i].kind == TokenKind::Cau)
    }

    /// Skeleton and frame rate shared by all clips (`None` if there are no CAUs).
    pub fn motion_format(&self) -> Option<(Arc<Skeleton>, f64)> {
        self.entries
            .iter()
            .find_map(|e| e.clip.as_ref())
            .map(|c| (c.skeleton().clone(), c.fps()))
    }
}
