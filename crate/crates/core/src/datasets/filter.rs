use std::collections::HashMap;

use super::InteractionEvent;
use crate::{AdsrError, Result};

/// Repeatedly drops users and items with fewer than `threshold` events until
/// nothing changes. Order of the surviving events is preserved.
pub fn filter_min_interactions(mut events: Vec<InteractionEvent>, threshold: usize) -> Result<Vec<InteractionEvent>> {
    if threshold == 0 {
        return Err(AdsrError::Config("filter threshold must be at least 1".into()));
    }
    loop {
        let mut users: HashMap<u64, usize> = HashMap::new();
        let mut items: HashMap<u64, usize> = HashMap::new();
        for e in &events {
            *users.entry(e.user).or_default() += 1;
            *items.entry(e.item).or_default() += 1;
        }
        let before = events.len();
        events.retain(|e| users[&e.user] >= threshold && items[&e.item] >= threshold);
        if events.len() == before {
            break;
        }
    }
    if events.is_empty() {
        return Err(AdsrError::EmptyDataset("interaction filtering".into()));
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(user: u64, item: u64, ts: i64) -> InteractionEvent {
        InteractionEvent {
            user,
            item,
            timestamp: ts,
            attributes: vec!["a".to_string()].into(),
        }
    }

    #[test]
    fn short_user_is_removed() {
        let mut events: Vec<_> = (0..19).map(|t| ev(1, t % 2, t as i64)).collect();
        events.extend((0..40).map(|t| ev(2, t % 2, t as i64)));
        let out = filter_min_interactions(events, 20).unwrap();
        assert!(out.iter().all(|e| e.user == 2));
        assert_eq!(out.len(), 40);
    }

    #[test]
    fn fixed_point_is_unchanged() {
        let events: Vec<_> = (0..3).flat_map(|u| (0..20).map(move |t| ev(u, 0, t as i64))).collect();
        let out = filter_min_interactions(events.clone(), 20).unwrap();
        assert_eq!(out, events);
    }

    #[test]
    fn cascade_removes_user_and_item() {
        // threshold 3: item 9 has 2 events; without it users 2 and 3 fall to
        // 2 events each, and once they go item 7 disappears as well.
        let events = vec![
            ev(1, 8, 0),
            ev(1, 8, 1),
            ev(1, 8, 2),
            ev(2, 8, 0),
            ev(2, 9, 1),
            ev(2, 7, 2),
            ev(3, 9, 0),
            ev(3, 7, 1),
            ev(3, 7, 2),
        ];
        let out = filter_min_interactions(events, 3).unwrap();
        let users: std::collections::BTreeSet<_> = out.iter().map(|e| e.user).collect();
        assert_eq!(users.into_iter().collect::<Vec<_>>(), vec![1]);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn everything_filtered_is_error() {
        let events = vec![ev(1, 1, 0)];
        assert!(matches!(filter_min_interactions(events, 2), Err(AdsrError::EmptyDataset(_))));
    }
}
