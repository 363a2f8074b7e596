use super::{Conversation, Utterance};
use crate::error::{Error, Result};

/// Number of preceding turns fed to the history encoder.
pub const DEFAULT_HISTORY: usize = 5;

/// The `history` turns before `index` followed by the utterance itself,
/// left-padded with `None` at the start of a conversation. All turns count,
/// regardless of speaker.
pub fn history_window(conv: &Conversation, index: usize, history: usize) -> Result<Vec<Option<&Utterance>>> {
    if index >= conv.utterances.len() {
        return Err(Error::Validation(format!(
            "history index {index} out of range for conversation '{}' with {} utterances",
            conv.id,
            conv.utterances.len()
        )));
    }
    Ok((0..=history)
        .map(|k| {
            let back = history - k;
            index.checked_sub(back).map(|i| &conv.utterances[i])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_util::conversation;
    use proptest::prelude::*;

    fn ids(w: &[Option<&Utterance>]) -> Vec<Option<String>> {
        w.iter().map(|u| u.map(|u| u.id.clone())).collect()
    }

    fn some(conv: &str, i: &[usize]) -> Vec<Option<String>> {
        i.iter().map(|i| Some(format!("{conv}/{i}"))).collect()
    }

    #[test]
    fn full_window_is_a_slice() {
        let c = conversation("c", 10);
        assert_eq!(ids(&history_window(&c, 7, 5).unwrap()), some("c", &[2, 3, 4, 5, 6, 7]));
    }

    #[test]
    fn start_of_conversation_is_padded() {
        let c = conversation("c", 10);
        let w = ids(&history_window(&c, 0, 5).unwrap());
        assert_eq!(w[..5], vec![None; 5]);
        assert_eq!(w[5], Some("c/0".into()));

        let w = ids(&history_window(&c, 3, 5).unwrap());
        let mut expect = vec![None, None];
        expect.extend(some("c", &[0, 1, 2, 3]));
        assert_eq!(w, expect);
    }

    #[test]
    fn out_of_range_index_errors() {
        let c = conversation("c", 3);
        assert!(history_window(&c, 3, 5).is_err());
    }

    proptest! {
        #[test]
        fn window_length_and_suffix(n in 1usize..20, h in 0usize..8, seed in 0usize..1000) {
            let c = conversation("c", n);
            let index = seed % n;
            let w = history_window(&c, index, h).unwrap();
            prop_assert_eq!(w.len(), h + 1);
            let first = index.saturating_sub(h);
            let present: Vec<&Utterance> = w.iter().flatten().copied().collect();
            let expected: Vec<&Utterance> = c.utterances[first..=index].iter().collect();
            prop_assert_eq!(present, expected);
            prop_assert!(w.iter().skip_while(|u| u.is_none()).all(|u| u.is_some()));
        }
    }
}
