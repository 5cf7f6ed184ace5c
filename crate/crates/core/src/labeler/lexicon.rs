//! Editable lexicon files: category phrases, cue phrases and modifiers.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::textproc::{tokenize, TokenSeq};

/// Number of coarse observation categories a [`super::LabelVector`] carries.
pub const NUM_CATEGORIES: usize = 14;

/// Environment variable naming a directory that replaces the built-in lexicons.
pub const LEXICON_DIR_ENV: &str = "CXR_LEXICON_DIR";

pub const CATEGORIES_FILE: &str = "categories.txt";
pub const PHRASES_FILE: &str = "category_phrases.tsv";
pub const NEGATION_FILE: &str = "negation_cues.txt";
pub const UNCERTAINTY_FILE: &str = "uncertainty_cues.txt";
pub const MODIFIERS_FILE: &str = "modifiers.txt";

pub const NO_FINDING: &str = "No Finding";
pub const SUPPORT_DEVICES: &str = "Support Devices";

const BUILTIN_CATEGORIES: &str = include_str!("../../data/categories.txt");
const BUILTIN_PHRASES: &str = include_str!("../../data/category_phrases.tsv");
const BUILTIN_NEGATION: &str = include_str!("../../data/negation_cues.txt");
const BUILTIN_UNCERTAINTY: &str = include_str!("../../data/uncertainty_cues.txt");
const BUILTIN_MODIFIERS: &str = include_str!("../../data/modifiers.txt");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error(
        "{file}: expected {NUM_CATEGORIES} categories with {NO_FINDING:?} first, found {found}"
    )]
    CategoryCount { file: String, found: usize },
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

/// The 14 named categories and the phrase lexicon that detects them.
#[derive(Debug, Clone)]
pub struct CategorySet {
    names: Vec<String>,
    phrases: Vec<(TokenSeq, usize)>,
    /// First token -> phrase indices, longest phrase first.
    by_first_token: HashMap<String, Vec<usize>>,
}

impl CategorySet {
    pub fn parse(categories: &str, phrases: &str) -> Result<CategorySet, LexiconError> {
        let names: Vec<String> = content_lines(categories)
            .map(|(_, l)| l.trim().to_string())
            .collect();
        let unique: BTreeSet<&String> = names.iter().collect();
        if names.len() != NUM_CATEGORIES || unique.len() != names.len() || names[0] != NO_FINDING {
            return Err(LexiconError::CategoryCount {
                file: CATEGORIES_FILE.into(),
                found: names.len(),
            });
        }

        let parse_err = |line, message: String| LexiconError::Parse {
            file: PHRASES_FILE.into(),
            line,
            message,
        };
        let mut entries = Vec::new();
        let mut seen = HashMap::new();
        for (line, text) in content_lines(phrases) {
            let (phrase, category) = text
                .split_once('\t')
                .ok_or_else(|| parse_err(line, "expected phrase<TAB>category".into()))?;
            let category = category.trim();
            let index = names
                .iter()
                .position(|n| n == category)
                .ok_or_else(|| parse_err(line, format!("unknown category {category:?}")))?;
            if index == 0 {
                return Err(parse_err(
                    line,
                    format!("{NO_FINDING:?} is derived and takes no phrases"),
                ));
            }
            let tokens = tokenize(phrase);
            if tokens.is_empty() {
                return Err(parse_err(line, "empty phrase".into()));
            }
            if let Some(previous) = seen.insert(tokens.clone(), index) {
                return Err(parse_err(
                    line,
                    format!(
                        "phrase {:?} already maps to {:?}",
                        tokens.joined(),
                        names[previous]
                    ),
                ));
            }
            entries.push((tokens, index));
        }

        let mut by_first_token: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, (tokens, _)) in entries.iter().enumerate() {
            by_first_token
                .entry(tokens.as_slice()[0].clone())
                .or_default()
                .push(i);
        }
        for candidates in by_first_token.values_mut() {
            candidates.sort_by_key(|&i| std::cmp::Reverse(entries[i].0.len()));
        }
        Ok(CategorySet {
            names,
            phrases: entries,
            by_first_token,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn phrases(&self) -> impl Iterator<Item = (&TokenSeq, usize)> {
        self.phrases.iter().map(|(p, c)| (p, *c))
    }

    /// Longest phrase matching `tokens` at `start`, as (end, category).
    pub(crate) fn longest_match_at(
        &self,
        tokens: &[String],
        start: usize,
    ) -> Option<(usize, usize)> {
        let candidates = self.by_first_token.get(&tokens[start])?;
        candidates.iter().find_map(|&i| {
            let (phrase, category) = &self.phrases[i];
            let end = start + phrase.len();
            (end <= tokens.len() && tokens[start..end] == *phrase.as_slice())
                .then_some((end, *category))
        })
    }
}

/// A list of multi-token cue phrases.
#[derive(Debug, Clone, Default)]
pub struct CueLexicon {
    phrases: Vec<TokenSeq>,
    tokens: BTreeSet<String>,
}

impl CueLexicon {
    pub fn parse(text: &str) -> CueLexicon {
        Self::from_phrases(content_lines(text).map(|(_, l)| l))
    }

    pub fn from_phrases<I, S>(phrases: I) -> CueLexicon
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let phrases: Vec<TokenSeq> = phrases
            .into_iter()
            .map(|p| tokenize(p.as_ref()))
            .filter(|p| !p.is_empty())
            .collect();
        let tokens = phrases.iter().flat_map(|p| p.iter().cloned()).collect();
        CueLexicon { phrases, tokens }
    }

    pub fn phrases(&self) -> &[TokenSeq] {
        &self.phrases
    }

    /// True if some cue lies entirely inside `window`.
    pub fn occurs_in(&self, window: &[String]) -> bool {
        self.phrases.iter().any(|cue| {
            let cue = cue.as_slice();
            cue.len() <= window.len() && window.windows(cue.len()).any(|w| w == cue)
        })
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.tokens.contains(token)
    }
}

/// Every lexicon the labeler needs, plus a content digest used as a version.
#[derive(Debug, Clone)]
pub struct Lexicons {
    pub categories: CategorySet,
    pub negation: CueLexicon,
    pub uncertainty: CueLexicon,
    pub modifiers: BTreeSet<String>,
    version: String,
}

impl Lexicons {
    pub fn builtin() -> Lexicons {
        Self::parse(
            BUILTIN_CATEGORIES,
            BUILTIN_PHRASES,
            BUILTIN_NEGATION,
            BUILTIN_UNCERTAINTY,
            BUILTIN_MODIFIERS,
        )
        .expect("built-in lexicons are valid")
    }

    pub fn parse(
        categories: &str,
        phrases: &str,
        negation: &str,
        uncertainty: &str,
        modifiers: &str,
    ) -> Result<Lexicons, LexiconError> {
        let mut hasher = Sha256::new();
        for part in [categories, phrases, negation, uncertainty, modifiers] {
            hasher.update(part.as_bytes());
            hasher.update([0u8]);
        }
        let digest = hasher.finalize();
        let version = digest[..6].iter().map(|b| format!("{b:02x}")).collect();

        let mut modifier_set = BTreeSet::new();
        for (line, text) in content_lines(modifiers) {
            let tokens = tokenize(text);
            if tokens.len() != 1 {
                return Err(LexiconError::Parse {
                    file: MODIFIERS_FILE.into(),
                    line,
                    message: format!("modifier must be a single token, got {text:?}"),
                });
            }
            modifier_set.extend(tokens.into_inner());
        }
        Ok(Lexicons {
            categories: CategorySet::parse(categories, phrases)?,
            negation: CueLexicon::parse(negation),
            uncertainty: CueLexicon::parse(uncertainty),
            modifiers: modifier_set,
            version,
        })
    }

    /// Loads the five lexicon files from `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Lexicons, LexiconError> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|source| LexiconError::Io { path, source })
        };
        Self::parse(
            &read(CATEGORIES_FILE)?,
            &read(PHRASES_FILE)?,
            &read(NEGATION_FILE)?,
            &read(UNCERTAINTY_FILE)?,
            &read(MODIFIERS_FILE)?,
        )
    }

    /// Lexicons from `$CXR_LEXICON_DIR` when set, otherwise the built-in set.
    pub fn from_env() -> Result<Lexicons, LexiconError> {
        match std::env::var_os(LEXICON_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Self::from_dir(dir),
            _ => Ok(Self::builtin()),
        }
    }

    /// Short hex digest of the lexicon contents.
    pub fn version(&self) -> &str {
        &self.version
    }

    /// Writes the built-in lexicon files into `dir` so they can be edited.
    pub fn export_builtin(dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (name, text) in [
            (CATEGORIES_FILE, BUILTIN_CATEGORIES),
            (PHRASES_FILE, BUILTIN_PHRASES),
            (NEGATION_FILE, BUILTIN_NEGATION),
            (UNCERTAINTY_FILE, BUILTIN_UNCERTAINTY),
            (MODIFIERS_FILE, BUILTIN_MODIFIERS),
        ] {
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}
