/// Word-level tokenizer.
///
/// Lowercases, splits on whitespace, then peels ASCII punctuation off both
/// ends of each word into single-character tokens. Inner punctuation stays
/// (`u.s`, `sudan's`), as do digits (`jia1o`).
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for word in lower.split_whitespace() {
        let bytes = word.as_bytes();
        let mut start = 0;
        while start < bytes.len() && bytes[start].is_ascii_punctuation() {
            start += 1;
        }
        let mut end = bytes.len();
        while end > start && bytes[end - 1].is_ascii_punctuation() {
            end -= 1;
        }
        // ASCII bytes are always char boundaries.
        out.extend(word[..start].chars().map(String::from));
        if end > start {
            out.push(word[start..end].to_string());
        }
        out.extend(word[end..].chars().map(String::from));
    }
    out
}
