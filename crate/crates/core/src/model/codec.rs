//! Serialization of post-processing inputs and interpretation of outputs.

use super::vocab::Vocabulary;
use super::ModelError;
use crate::env::world::{self, prefix_token, World};
use crate::env::{ModuleOutput, Processed};

pub const MAX_INPUT_LEN: usize = 256;
pub const MAX_OUTPUT_LEN: usize = 128;

/// `[BOS, PREFIX_m, context, SEP, input, SEP, output, EOS]`, dropping the
/// oldest context tokens when the sequence would exceed the input cap.
pub fn encode_ppn_input<A: AsRef<str>, B: AsRef<str>, C: AsRef<str>>(
    vocab: &Vocabulary,
    context: &[A],
    input: &[B],
    output: &[C],
    module: usize,
) -> Result<Vec<u32>, ModelError> {
    if module == 0 || module > vocab.module_count() {
        return Err(ModelError::UnknownToken(prefix_token(module)));
    }
    let ctx = vocab.encode(context)?;
    let inp = vocab.encode(input)?;
    let out = vocab.encode(output)?;
    let sp = vocab.specials();
    let fixed = 5 + inp.len() + out.len();
    if fixed > MAX_INPUT_LEN {
        return Err(ModelError::TooLong(fixed));
    }
    let keep = ctx.len().min(MAX_INPUT_LEN - fixed);
    let mut x = Vec::with_capacity(fixed + keep);
    x.push(sp.bos);
    x.push(sp.prefix(module));
    x.extend_from_slice(&ctx[ctx.len() - keep..]);
    x.push(sp.sep);
    x.extend(inp);
    x.push(sp.sep);
    x.extend(out);
    x.push(sp.eos);
    Ok(x)
}

/// Target sequence for a token list: the tokens followed by EOS.
pub fn encode_target<S: AsRef<str>>(vocab: &Vocabulary, target: &[S]) -> Result<Vec<u32>, ModelError> {
    let mut y = vocab.encode(target)?;
    y.push(vocab.specials().eos);
    Ok(y)
}

pub fn is_copy(vocab: &Vocabulary, y: &[u32]) -> bool {
    let sp = vocab.specials();
    y == [sp.copy, sp.eos] || y == [sp.copy]
}

/// Interprets a generated sequence as a replacement for `original`. `[COPY]`
/// keeps the original; anything that fails to parse does too, with the
/// fallback flag raised.
pub fn decode_output(world: &World, vocab: &Vocabulary, y: &[u32], original: &ModuleOutput) -> Processed {
    if is_copy(vocab, y) {
        return Processed {
            output: original.clone(),
            fallback: false,
        };
    }
    let sp = vocab.specials();
    let body = match y.split_last() {
        Some((&last, rest)) if last == sp.eos => rest,
        _ => y,
    };
    let toks: Vec<&str> = body.iter().map(|&t| vocab.token(t)).collect();
    let reserved = [world::BOS, world::EOS, world::SEP, world::COPY];
    if toks.iter().any(|t| reserved.contains(t) || t.starts_with("<m")) {
        return fallback(original);
    }
    match original.reparse(world, &toks) {
        Ok(output) => Processed { output, fallback: false },
        Err(_) => fallback(original),
    }
}

fn fallback(original: &ModuleOutput) -> Processed {
    Processed {
        output: original.clone(),
        fallback: true,
    }
}
