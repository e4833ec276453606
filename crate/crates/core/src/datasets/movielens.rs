use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use super::InteractionEvent;
use crate::error::io_err;
use crate::{AdsrError, Result};

fn read_latin1(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(bytes.iter().map(|&b| b as char).collect())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> AdsrError {
    AdsrError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, raw: Option<&str>) -> Result<T> {
    let raw = raw.ok_or_else(|| parse_err(path, line, format!("missing {name}")))?;
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {name} {raw:?}")))
}

/// Loads `ratings.dat` and `movies.dat`. Events come back grouped by user
/// (ascending id), each user's events sorted by timestamp with ties kept in
/// file order.
pub fn load_movielens(ratings_path: &Path, movies_path: &Path) -> Result<Vec<InteractionEvent>> {
    let movies = read_latin1(movies_path)?;
    let mut genres: HashMap<u64, Arc<[String]>> = HashMap::new();
    for (n, line) in movies.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split("::").collect();
        if parts.len() != 3 {
            return Err(parse_err(movies_path, n + 1, "expected MovieID::Title::Genres"));
        }
        let id: u64 = field(movies_path, n + 1, "movie id", Some(parts[0]))?;
        let mut set: Vec<String> = parts[2]
            .trim()
            .split('|')
            .filter(|g| !g.is_empty())
            .map(str::to_string)
            .collect();
        set.sort();
        set.dedup();
        if set.is_empty() {
            return Err(AdsrError::DataIntegrity(format!("movie {id} has no genre")));
        }
        genres.insert(id, set.into());
    }

    let ratings = read_latin1(ratings_path)?;
    let mut events = Vec::new();
    for (n, line) in ratings.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split("::");
        let user: u64 = field(ratings_path, n + 1, "user id", parts.next())?;
        let item: u64 = field(ratings_path, n + 1, "movie id", parts.next())?;
        let _rating: f64 = field(ratings_path, n + 1, "rating", parts.next())?;
        let timestamp: i64 = field(ratings_path, n + 1, "timestamp", parts.next())?;
        if parts.next().is_some() {
            return Err(parse_err(ratings_path, n + 1, "too many fields"));
        }
        let attributes = genres
            .get(&item)
            .ok_or_else(|| AdsrError::DataIntegrity(format!("movie {item} (line {}) has no genre row", n + 1)))?
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

/// Stable sort by (user, timestamp).
pub(crate) fn sort_events(events: &mut [InteractionEvent]) {
    events.sort_by_key(|e| (e.user, e.timestamp));
}

/// Writes events in MovieLens-1M layout (rating column fixed at 5).
pub fn write_movielens(dir: &Path, events: &[InteractionEvent]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut movies: Vec<(u64, &Arc<[String]>)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for e in events {
        if seen.insert(e.item) {
            movies.push((e.item, &e.attributes));
        }
    }
    movies.sort_by_key(|m| m.0);

    let path = dir.join("movies.dat");
    let mut f = std::io::BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
    for (id, attrs) in movies {
        writeln!(f, "{id}::Item {id}::{}", attrs.join("|")).map_err(io_err(&path))?;
    }
    f.flush().map_err(io_err(&path))?;

    let path = dir.join("ratings.dat");
    let mut f = std::io::BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
    for e in events {
        writeln!(f, "{}::{}::5::{}", e.user, e.item, e.timestamp).map_err(io_err(&path))?;
    }
    f.flush().map_err(io_err(&path))?;
    Ok(())
}
