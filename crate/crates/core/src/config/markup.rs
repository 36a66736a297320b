//! The rich-text subset accepted in instruction bodies.
//!
//! - blank lines separate paragraphs
//! - consecutive lines starting with `- ` or `* ` form a bulleted list
//! - a single newline inside a paragraph is a line break
//! - `**strong**` and `*emphasis*` (or `_emphasis_`) inline
//!
//! Anything that looks like a raw HTML tag, comment or processing
//! instruction is rejected.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Block {
    Paragraph { inlines: Vec<Inline> },
    List { items: Vec<Vec<Inline>> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Inline {
    Text { text: String },
    Emphasis { text: String },
    Strong { text: String },
    LineBreak,
}

/// Returns the byte offset of the first raw-HTML construct, if any.
pub fn find_raw_html(body: &str) -> Option<usize> {
    let bytes = body.as_bytes();
    bytes.windows(2).position(|w| {
        w[0] == b'<' && (w[1].is_ascii_alphabetic() || matches!(w[1], b'/' | b'!' | b'?'))
    })
}

pub fn check(body: &str) -> Result<(), String> {
    if body.trim().is_empty() {
        return Err("must be non-empty".into());
    }
    if let Some(at) = find_raw_html(body) {
        return Err(format!("raw HTML is not allowed (at byte {at})"));
    }
    if body.chars().any(|c| c.is_control() && c != '\n' && c != '\r' && c != '\t') {
        return Err("contains control characters".into());
    }
    Ok(())
}

fn list_item(line: &str) -> Option<&str> {
    line.strip_prefix("- ").or_else(|| line.strip_prefix("* "))
}

/// Parses a body that already passed [`check`] into blocks.
pub fn parse(body: &str) -> Vec<Block> {
    let normalized = body.replace("\r\n", "\n");
    let mut blocks = Vec::new();
    for chunk in normalized.split("\n\n") {
        let lines: Vec<&str> = chunk.lines().map(str::trim_end).filter(|l| !l.trim().is_empty()).collect();
        if lines.is_empty() {
            continue;
        }
        let mut para: Vec<&str> = Vec::new();
        let mut items: Vec<Vec<Inline>> = Vec::new();
        for line in lines {
            let trimmed = line.trim_start();
            if let Some(item) = list_item(trimmed) {
                flush_paragraph(&mut para, &mut blocks);
                items.push(parse_inlines(item));
            } else {
                if !items.is_empty() {
                    blocks.push(Block::List {
                        items: std::mem::take(&mut items),
                    });
                }
                para.push(line);
            }
        }
        flush_paragraph(&mut para, &mut blocks);
        if !items.is_empty() {
            blocks.push(Block::List { items });
        }
    }
    blocks
}

fn flush_paragraph(para: &mut Vec<&str>, blocks: &mut Vec<Block>) {
    if para.is_empty() {
        return;
    }
    let mut inlines = Vec::new();
    for (i, line) in para.drain(..).enumerate() {
        if i > 0 {
            inlines.push(Inline::LineBreak);
        }
        inlines.extend(parse_inlines(line));
    }
    blocks.push(Block::Paragraph { inlines });
}

pub fn parse_inlines(line: &str) -> Vec<Inline> {
    let mut out = Vec::new();
    let mut text = String::new();
    let mut rest = line;
    while !rest.is_empty() {
        let (marker, make): (&str, fn(String) -> Inline) = if rest.starts_with("**") {
            ("**", |t| Inline::Strong { text: t })
        } else if rest.starts_with('*') {
            ("*", |t| Inline::Emphasis { text: t })
        } else if rest.starts_with('_') {
            ("_", |t| Inline::Emphasis { text: t })
        } else {
            let c = rest.chars().next().unwrap_or_default();
            text.push(c);
            rest = &rest[c.len_utf8()..];
            continue;
        };
        let after = &rest[marker.len()..];
        match after.find(marker) {
            Some(end) if end > 0 => {
                if !text.is_empty() {
                    out.push(Inline::Text {
                        text: std::mem::take(&mut text),
                    });
                }
                out.push(make(after[..end].to_string()));
                rest = &after[end + marker.len()..];
            }
            _ => {
                text.push_str(marker);
                rest = after;
            }
        }
    }
    if !text.is_empty() {
        out.push(Inline::Text { text });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Inline {
        Inline::Text { text: s.into() }
    }

    #[test]
    fn rejects_tags_comments_and_empty() {
        assert!(check("Hello <b>there</b>").is_err());
        assert!(check("x </p>").is_err());
        assert!(check("<!-- hi -->").is_err());
        assert!(check("   \n").is_err());
        assert!(check("2 < 3 and 4 > 1").is_ok());
    }

    #[test]
    fn paragraphs_lists_and_breaks() {
        let blocks = parse("Welcome *all*.\nSecond line\n\n- one\n- **two**\n\nBye");
        assert_eq!(
            blocks,
            vec![
                Block::Paragraph {
                    inlines: vec![
                        t("Welcome "),
                        Inline::Emphasis { text: "all".into() },
                        t("."),
                        Inline::LineBreak,
                        t("Second line"),
                    ]
                },
                Block::List {
                    items: vec![vec![t("one")], vec![Inline::Strong { text: "two".into() }]]
                },
                Block::Paragraph { inlines: vec![t("Bye")] },
            ]
        );
    }

    #[test]
    fn unmatched_markers_stay_literal() {
        assert_eq!(parse_inlines("5 * 3 = 15"), vec![t("5 * 3 = 15")]);
        assert_eq!(parse_inlines("snake_case"), vec![t("snake_case")]);
    }
}
