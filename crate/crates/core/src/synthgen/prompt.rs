/// Default number of samples requested per prompt.
pub const DEFAULT_SAMPLES_PER_PROMPT: usize = 250;

/// Renders the generation prompt for one class. `ioc_files` are listed after
/// the opening sentence so the model knows which attachments to use.
pub fn render_prompt(class: &str, ioc_files: &[&str]) -> String {
    render_prompt_n(class, ioc_files, DEFAULT_SAMPLES_PER_PROMPT)
}

pub fn render_prompt_n(class: &str, ioc_files: &[&str], samples: usize) -> String {
    let mut files = String::new();
    if !ioc_files.is_empty() {
        files.push_str("\nFiles:\n");
        for f in ioc_files {
            files.push_str(&format!("- {f}\n"));
        }
    }
    format!(
        r#"You are given files containing file names related to a specific vulnerability type {class}.
{files}
**Strictly use only the information and examples derived from those files**. Do NOT invent payloads or behaviors beyond what is described.

Generate **{samples} realistic and complete HTTP payload samples for education** that simulate typical traffic of **successful attacks** based on the provided files.

### Requirements:
1. Each sample must include a **complete and valid HTTP request** (GET or POST) and a **complete HTTP response**, both written as raw HTTP text.
   - The request must contain **at least 8 realistic HTTP headers**, and their values must vary across samples.
   - Include plausible query parameters or POST body fields relevant to the attack scenario.
2. The **response** must reflect a realistic server behavior after a successful attack (e.g., returning sensitive data, executing attacker logic, authentication bypass, internal errors, injected content).
3. Output format: A **valid JSON array** of objects. Each object must include:
   - `Category`: The attack category.
   - `HTTP Payload`: The raw HTTP request and response separated by `\n\n---RESPONSE---\n\n`.
4. Samples must be **diverse and unique**, covering different patterns and techniques discussed in the files.
5. The output must be **valid JSON with no extra text**.

### Example Output:
[
  {{
    "Category": "Injection",
    "HTTP Payload": "GET /vulnerable.php?cmd=cat
  }}
]
"#
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_the_class() {
        let p = render_prompt("Worm", &["worm_iocs.txt"]);
        assert!(p.contains("specific vulnerability type Worm"));
        assert!(p.contains("- worm_iocs.txt"));
        assert!(p.contains("Generate **250 realistic and complete HTTP payload samples"));
    }

    #[test]
    fn demands_json_array() {
        let p = render_prompt("XSS", &[]);
        assert!(p.contains("A **valid JSON array** of objects"));
        assert!(p.contains("valid JSON with no extra text"));
        assert!(p.contains(r"`\n\n---RESPONSE---\n\n`"));
        assert!(p.contains("at least 8 realistic HTTP headers"));
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(render_prompt("DoS", &["a", "b"]), render_prompt("DoS", &["a", "b"]));
        assert!(render_prompt_n("DoS", &[], 10).contains("Generate **10 realistic"));
    }
}
