//! Tweet tokenizer.
//!
//! Rules, applied to the lowercased input:
//! 1. split on Unicode whitespace;
//! 2. a chunk starting with `http://`, `https://` or `www.` is a URL and kept
//!    whole, except for a trailing punctuation run;
//! 3. emoji (with variation selectors, skin tones and ZWJ sequences) become
//!    their own tokens;
//! 4. leading and trailing punctuation runs split off as single tokens, but a
//!    leading `@` or `#` directly followed by a word character stays attached.

pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        split_chunk(chunk, &mut out);
    }
    out
}

/// Whether `token` is an `@user` mention; returns the user id.
pub fn mention_target(token: &str) -> Option<&str> {
    let rest = token.strip_prefix('@')?;
    (!rest.is_empty() && rest.chars().all(is_word_char)).then_some(rest)
}

fn is_url(chunk: &str) -> bool {
    chunk.starts_with("http://") || chunk.starts_with("https://") || chunk.starts_with("www.")
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_punct(c: char) -> bool {
    !is_word_char(c) && !c.is_whitespace()
}

fn is_emoji(c: char) -> bool {
    matches!(
        c as u32,
        0x1F300..=0x1F5FF
            | 0x1F600..=0x1F64F
            | 0x1F680..=0x1F6FF
            | 0x1F900..=0x1F9FF
            | 0x1FA70..=0x1FAFF
            | 0x2600..=0x26FF
            | 0x2700..=0x27BF
            | 0x1F1E6..=0x1F1FF
    )
}

fn is_regional_indicator(c: char) -> bool {
    (0x1F1E6..=0x1F1FF).contains(&(c as u32))
}

fn is_emoji_modifier(c: char) -> bool {
    matches!(c as u32, 0xFE0F | 0x1F3FB..=0x1F3FF)
}

const ZWJ: char = '\u{200D}';

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    if is_url(chunk) {
        let core_end = chunk
            .char_indices()
            .rev()
            .take_while(|&(_, c)| is_punct(c) && c != '/')
            .last()
            .map_or(chunk.len(), |(i, _)| i);
        out.push(chunk[..core_end].to_string());
        if core_end < chunk.len() {
            out.push(chunk[core_end..].to_string());
        }
        return;
    }
    let chars: Vec<(usize, char)> = chunk.char_indices().collect();
    let mut seg_start = 0;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_emoji(c) {
            i += 1;
            continue;
        }
        split_punct(&chunk[seg_start..pos], out);
        let mut j = i + 1;
        if is_regional_indicator(c) {
            if j < chars.len() && is_regional_indicator(chars[j].1) {
                j += 1;
            }
        } else {
            loop {
                while j < chars.len() && is_emoji_modifier(chars[j].1) {
                    j += 1;
                }
                if j + 1 < chars.len() && chars[j].1 == ZWJ && is_emoji(chars[j + 1].1) {
                    j += 2;
                } else {
                    break;
                }
            }
        }
        let end = chars.get(j).map_or(chunk.len(), |&(p, _)| p);
        out.push(chunk[pos..end].to_string());
        seg_start = end;
        i = j;
    }
    split_punct(&chunk[seg_start..], out);
}

fn split_punct(seg: &str, out: &mut Vec<String>) {
    if seg.is_empty() {
        return;
    }
    let chars: Vec<(usize, char)> = seg.char_indices().collect();
    let mut lead = 0;
    while lead < chars.len() {
        let c = chars[lead].1;
        let sigil = (c == '@' || c == '#') && chars.get(lead + 1).is_some_and(|&(_, n)| is_word_char(n));
        if !is_punct(c) || sigil {
            break;
        }
        lead += 1;
    }
    let mut trail = chars.len();
    while trail > lead && is_punct(chars[trail - 1].1) {
        trail -= 1;
    }
    let at = |k: usize| chars.get(k).map_or(seg.len(), |&(p, _)| p);
    for (a, b) in [(0, lead), (lead, trail), (trail, chars.len())] {
        if a < b {
            out.push(seg[at(a)..at(b)].to_string());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn lowercases_and_splits_trailing_punctuation() {
        assert_eq!(toks("Hello WORLD!"), ["hello", "world", "!"]);
    }

    #[test]
    fn keeps_mentions_hashtags_urls() {
        assert_eq!(toks("@Bob check http://x.co #nyc"), ["@bob", "check", "http://x.co", "#nyc"]);
    }

    #[test]
    fn empty_input() {
        assert!(toks("").is_empty());
        assert!(toks("   \t\n").is_empty());
    }

    #[test]
    fn punctuation_runs_are_single_tokens() {
        assert_eq!(toks("(wow)..."), ["(", "wow", ")..."]);
        assert_eq!(toks("!!!"), ["!!!"]);
        assert_eq!(toks("\"@amy,"), ["\"", "@amy", ","]);
    }

    #[test]
    fn url_trailing_punctuation() {
        assert_eq!(toks("see https://a.b/c/."), ["see", "https://a.b/c/", "."]);
        assert_eq!(toks("www.x.org,"), ["www.x.org", ","]);
    }

    #[test]
    fn emoji_are_tokens() {
        assert_eq!(toks("hi😀there"), ["hi", "😀", "there"]);
        assert_eq!(toks("👍🏽!"), ["👍🏽", "!"]);
        assert_eq!(toks("👨\u{200D}👩\u{200D}👧"), ["👨\u{200D}👩\u{200D}👧"]);
        assert_eq!(toks("🇺🇸🇫🇷"), ["🇺🇸", "🇫🇷"]);
    }

    #[test]
    fn inner_punctuation_kept() {
        assert_eq!(toks("don't stop"), ["don't", "stop"]);
    }

    #[test]
    fn mention_targets() {
        assert_eq!(mention_target("@bob"), Some("bob"));
        assert_eq!(mention_target("@"), None);
        assert_eq!(mention_target("bob"), None);
        assert_eq!(mention_target("@bo.b"), None);
    }
}
