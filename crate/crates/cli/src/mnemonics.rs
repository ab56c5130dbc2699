//! Opcode names for synthetic corpora.
//!
//! The statistics never look at the names — profiles are index-based — but
//! realistic mnemonics keep synthetic corpora readable next to imported
//! ones. Vocabularies larger than the embedded list get numbered slots.

pub const MNEMONICS: &[&str] = &[
    "mov", "push", "pop", "call", "ret", "jmp", "je", "jne", "jg", "jge", "jl", "jle", "ja",
    "jae", "jb", "jbe", "js", "jns", "jo", "jno", "add", "sub", "mul", "imul", "div", "idiv",
    "inc", "dec", "adc", "sbb", "neg", "and", "or", "xor", "not", "shl", "shr", "sar", "rol",
    "ror", "rcl", "rcr", "cmp", "test", "lea", "nop", "int", "hlt", "xchg", "movzx", "movsx",
    "cdq", "cwde", "bswap", "movsb", "movsw", "movsd", "stosb", "stosw", "stosd", "lodsb",
    "lodsw", "lodsd", "scasb", "scasw", "scasd", "cmpsb", "cmpsw", "cmpsd", "rep", "repe",
    "repne", "loop", "loope", "loopne", "enter", "leave", "pushad", "popad", "pushfd", "popfd",
    "sahf", "lahf", "clc", "stc", "cmc", "cld", "std", "cli", "sti", "sete", "setne", "setg",
    "setl", "seta", "setb", "bt", "bts", "btr", "btc", "bsf", "bsr", "cmove", "cmovne", "cmovg",
    "cmovl", "fld", "fst", "fstp", "fadd", "fsub", "fmul", "fdiv", "fxch", "fabs", "fchs",
    "fcom", "fild", "fistp", "fsqrt", "cpuid", "rdtsc", "in", "out",
];

/// First `n` opcode names: embedded mnemonics, then `opNNNN` filler.
pub fn opcode_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match MNEMONICS.get(i) {
            Some(m) => (*m).to_string(),
            None => format!("op{i:04}"),
        })
        .collect()
}
