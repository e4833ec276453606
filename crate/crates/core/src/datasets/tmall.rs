use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::movielens::sort_events;
use super::InteractionEvent;
use crate::error::io_err;
use crate::{AdsrError, Result};

/// Action codes of the TMall user log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TmallAction {
    Click,
    Cart,
    Buy,
    Favorite,
}

impl TmallAction {
    pub fn code(self) -> u32 {
        match self {
            TmallAction::Click => 0,
            TmallAction::Cart => 1,
            TmallAction::Buy => 2,
            TmallAction::Favorite => 3,
        }
    }
}

impl FromStr for TmallAction {
    type Err = AdsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "click" | "0" => Ok(TmallAction::Click),
            "cart" | "1" => Ok(TmallAction::Cart),
            "buy" | "purchase" | "2" => Ok(TmallAction::Buy),
            "favorite" | "favourite" | "3" => Ok(TmallAction::Favorite),
            other => Err(AdsrError::Config(format!("unknown TMall action {other:?}"))),
        }
    }
}

/// Column layout of a TMall log. Defaults match `user_log_format1.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TmallColumns {
    pub user: usize,
    pub item: usize,
    pub category: usize,
    pub timestamp: usize,
    pub action: usize,
    pub delimiter: char,
    pub has_header: bool,
}

impl Default for TmallColumns {
    fn default() -> Self {
        Self {
            user: 0,
            item: 1,
            category: 2,
            timestamp: 5,
            action: 6,
            delimiter: ',',
            has_header: true,
        }
    }
}

/// Loads the rows whose action equals `action_filter` (e.g. `"buy"`).
pub fn load_tmall(path: &Path, columns: &TmallColumns, action_filter: &str) -> Result<Vec<InteractionEvent>> {
    let wanted = action_filter.parse::<TmallAction>()?.code();
    if !columns.delimiter.is_ascii() {
        return Err(AdsrError::Config("TMall delimiter must be ASCII".into()));
    }
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(columns.delimiter as u8)
        .has_headers(columns.has_header)
        .flexible(true)
        .from_reader(std::io::BufReader::new(file));

    let parse_err = |line: usize, message: String| AdsrError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut categories: std::collections::HashMap<String, Arc<[String]>> = Default::default();
    let mut events = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let get = |col: usize, name: &str| {
            record
                .get(col)
                .map(str::trim)
                .ok_or_else(|| parse_err(line, format!("missing {name} column {col}")))
        };
        let action: u32 = get(columns.action, "action")?
            .parse()
            .map_err(|_| parse_err(line, "bad action code".into()))?;
        if action != wanted {
            continue;
        }
        let user = get(columns.user, "user")?
            .parse()
            .map_err(|_| parse_err(line, "bad user id".into()))?;
        let item = get(columns.item, "item")?
            .parse()
            .map_err(|_| parse_err(line, "bad item id".into()))?;
        let timestamp = get(columns.timestamp, "timestamp")?
            .parse()
            .map_err(|_| parse_err(line, "bad timestamp".into()))?;
        let category = record.get(columns.category).map(str::trim).unwrap_or("");
        if category.is_empty() {
            return Err(AdsrError::DataIntegrity(format!(
                "{}:{line}: missing category",
                path.display()
            )));
        }
        let attributes = categories
            .entry(category.to_string())
            .or_insert_with(|| Arc::from(vec![category.to_string()]))
            .clone();
        events.push(InteractionEvent {
            user,
            item,
            timestamp,
            attributes,
        });
    }
    sort_events(&mut events);
    Ok(events)
}
