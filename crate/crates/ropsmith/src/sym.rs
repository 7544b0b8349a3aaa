//! Hash-consed bitvector/array/boolean terms, with a concrete evaluator and
//! SMT-LIB rendering. This is the expression language shared by the symbolic
//! executor, gadget summaries, and the chain compiler's composition pass.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::rc::Rc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TermId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sort {
    Bool,
    Bv(u32),
    /// (Array (_ BitVec 64) (_ BitVec 8))
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Const { bits: u32, value: u64 },
    BoolConst(bool),
    /// Free variable, index into the arena's var table.
    Var(u32),
    Add(TermId, TermId),
    Sub(TermId, TermId),
    And(TermId, TermId),
    Or(TermId, TermId),
    Xor(TermId, TermId),
    Shl(TermId, TermId),
    Lshr(TermId, TermId),
    Ashr(TermId, TermId),
    Neg(TermId),
    Concat(TermId, TermId),
    Extract { hi: u32, lo: u32, arg: TermId },
    Select { arr: TermId, idx: TermId },
    Store { arr: TermId, idx: TermId, val: TermId },
    Eq(TermId, TermId),
    Not(TermId),
    BoolAnd(TermId, TermId),
    BoolOr(TermId, TermId),
    Ite { cond: TermId, then: TermId, otherwise: TermId },
}

#[derive(Debug, Clone)]
pub struct VarInfo {
    pub name: String,
    pub sort: Sort,
    pub term: TermId,
}

#[derive(Debug, Default, Clone)]
pub struct Arena {
    nodes: Vec<Node>,
    dedup: HashMap<Node, TermId>,
    vars: Vec<VarInfo>,
}

impl Arena {
    pub fn new() -> Arena {
        Arena::default()
    }

    fn intern(&mut self, n: Node) -> TermId {
        if let Some(id) = self.dedup.get(&n) {
            return *id;
        }
        let id = TermId(self.nodes.len() as u32);
        self.nodes.push(n);
        self.dedup.insert(n, id);
        id
    }

    pub fn node(&self, t: TermId) -> Node {
        self.nodes[t.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn var_info(&self, idx: u32) -> &VarInfo {
        &self.vars[idx as usize]
    }

    pub fn vars(&self) -> &[VarInfo] {
        &self.vars
    }

    pub fn fresh_var(&mut self, name: impl Into<String>, sort: Sort) -> TermId {
        let idx = self.vars.len() as u32;
        // Var nodes are identified by index, never deduplicated away.
        let id = TermId(self.nodes.len() as u32);
        self.nodes.push(Node::Var(idx));
        self.vars.push(VarInfo { name: name.into(), sort, term: id });
        id
    }

    pub fn var_term(&self, idx: u32) -> TermId {
        self.vars[idx as usize].term
    }

    pub fn bv(&mut self, bits: u32, value: u64) -> TermId {
        let value = if bits >= 64 { value } else { value & ((1u64 << bits) - 1) };
        self.intern(Node::Const { bits, value })
    }

    pub fn bool_const(&mut self, b: bool) -> TermId {
        self.intern(Node::BoolConst(b))
    }

    pub fn sort(&self, t: TermId) -> Sort {
        match self.node(t) {
            Node::Const { bits, .. } => Sort::Bv(bits),
            Node::BoolConst(_) => Sort::Bool,
            Node::Var(i) => self.vars[i as usize].sort,
            Node::Add(a, _)
            | Node::Sub(a, _)
            | Node::And(a, _)
            | Node::Or(a, _)
            | Node::Xor(a, _)
            | Node::Shl(a, _)
            | Node::Lshr(a, _)
            | Node::Ashr(a, _)
            | Node::Neg(a) => self.sort(a),
            Node::Concat(a, b) => match (self.sort(a), self.sort(b)) {
                (Sort::Bv(x), Sort::Bv(y)) => Sort::Bv(x + y),
                _ => panic!("concat of non-bitvectors"),
            },
            Node::Extract { hi, lo, .. } => Sort::Bv(hi - lo + 1),
            Node::Select { .. } => Sort::Bv(8),
            Node::Store { .. } => Sort::Array,
            Node::Eq(..) | Node::Not(_) | Node::BoolAnd(..) | Node::BoolOr(..) => Sort::Bool,
            Node::Ite { then, .. } => self.sort(then),
        }
    }

    pub fn width(&self, t: TermId) -> u32 {
        match self.sort(t) {
            Sort::Bv(w) => w,
            s => panic!("expected bitvector, got {s:?}"),
        }
    }

    fn bin(&mut self, f: fn(TermId, TermId) -> Node, a: TermId, b: TermId) -> TermId {
        debug_assert_eq!(self.width(a), self.width(b), "width mismatch");
        self.intern(f(a, b))
    }

    pub fn add(&mut self, a: TermId, b: TermId) -> TermId {
        self.bin(Node::Add, a, b)
    }

    pub fn sub(&mut self, a: TermId, b: TermId) -> TermId {
        self.bin(Node::Sub, a, b)
    }

    pub fn bvand(&mut self, a: TermId, b: TermId) -> TermId {
        self.bin(Node::And, a, b)
    }

    pub fn bvor(&mut self, a: TermId, b: TermId) -> TermId {
        self.bin(Node::Or, a, b)
    }

    pub fn bvxor(&mut self, a: TermId, b: TermId) -> TermId {
        self.bin(Node::Xor, a, b)
    }

    pub fn shl(&mut self, a: TermId, b: TermId) -> TermId {
        self.bin(Node::Shl, a, b)
    }

    pub fn lshr(&mut self, a: TermId, b: TermId) -> TermId {
        self.bin(Node::Lshr, a, b)
    }

    pub fn ashr(&mut self, a: TermId, b: TermId) -> TermId {
        self.bin(Node::Ashr, a, b)
    }

    pub fn neg(&mut self, a: TermId) -> TermId {
        self.intern(Node::Neg(a))
    }

    pub fn concat(&mut self, high: TermId, low: TermId) -> TermId {
        self.intern(Node::Concat(high, low))
    }

    pub fn extract(&mut self, hi: u32, lo: u32, arg: TermId) -> TermId {
        debug_assert!(hi >= lo && hi < self.width(arg));
        self.intern(Node::Extract { hi, lo, arg })
    }

    pub fn zext_to_64(&mut self, t: TermId) -> TermId {
        let w = self.width(t);
        if w == 64 {
            return t;
        }
        let zeros = self.bv(64 - w, 0);
        self.concat(zeros, t)
    }

    pub fn select(&mut self, arr: TermId, idx: TermId) -> TermId {
        self.intern(Node::Select { arr, idx })
    }

    pub fn store(&mut self, arr: TermId, idx: TermId, val: TermId) -> TermId {
        self.intern(Node::Store { arr, idx, val })
    }

    /// Little-endian multi-byte load: the select at the highest address forms
    /// the most significant byte of the concat.
    pub fn select_le(&mut self, arr: TermId, addr: TermId, bytes: u64) -> TermId {
        let mut term = None;
        for i in 0..bytes {
            let off = self.bv(64, i);
            let idx = self.add(addr, off);
            let byte = self.select(arr, idx);
            term = Some(match term {
                None => byte,
                Some(low) => self.concat(byte, low),
            });
        }
        term.unwrap()
    }

    /// Little-endian multi-byte store.
    pub fn store_le(&mut self, arr: TermId, addr: TermId, val: TermId, bytes: u64) -> TermId {
        let mut arr = arr;
        for i in 0..bytes {
            let off = self.bv(64, i);
            let idx = self.add(addr, off);
            let byte = self.extract((i * 8 + 7) as u32, (i * 8) as u32, val);
            arr = self.store(arr, idx, byte);
        }
        arr
    }

    pub fn eq(&mut self, a: TermId, b: TermId) -> TermId {
        self.intern(Node::Eq(a, b))
    }

    pub fn not(&mut self, a: TermId) -> TermId {
        self.intern(Node::Not(a))
    }

    pub fn bool_and(&mut self, a: TermId, b: TermId) -> TermId {
        self.intern(Node::BoolAnd(a, b))
    }

    pub fn bool_or(&mut self, a: TermId, b: TermId) -> TermId {
        self.intern(Node::BoolOr(a, b))
    }

    pub fn ite(&mut self, cond: TermId, then: TermId, otherwise: TermId) -> TermId {
        self.intern(Node::Ite { cond, then, otherwise })
    }

    pub fn conj(&mut self, terms: &[TermId]) -> TermId {
        match terms {
            [] => self.bool_const(true),
            [t] => *t,
            [head, rest @ ..] => {
                let r = self.conj(rest);
                self.bool_and(*head, r)
            }
        }
    }

    /// Rewrite `term`, replacing free variables according to `map`.
    /// Entries map variable indices to replacement terms.
    pub fn substitute(&mut self, term: TermId, map: &HashMap<u32, TermId>) -> TermId {
        let mut memo = HashMap::new();
        self.subst_inner(term, map, &mut memo)
    }

    fn subst_inner(
        &mut self,
        term: TermId,
        map: &HashMap<u32, TermId>,
        memo: &mut HashMap<TermId, TermId>,
    ) -> TermId {
        if let Some(t) = memo.get(&term) {
            return *t;
        }
        let node = self.node(term);
        let out = match node {
            Node::Const { .. } | Node::BoolConst(_) => term,
            Node::Var(i) => map.get(&i).copied().unwrap_or(term),
            Node::Add(a, b) => {
                let (a, b) = (self.subst_inner(a, map, memo), self.subst_inner(b, map, memo));
                self.add(a, b)
            }
            Node::Sub(a, b) => {
                let (a, b) = (self.subst_inner(a, map, memo), self.subst_inner(b, map, memo));
                self.sub(a, b)
            }
            Node::And(a, b) => {
                let (a, b) = (self.subst_inner(a, map, memo), self.subst_inner(b, map, memo));
                self.bvand(a, b)
            }
            Node::Or(a, b) => {
                let (a, b) = (self.subst_inner(a, map, memo), self.subst_inner(b, map, memo));
                self.bvor(a, b)
            }
            Node::Xor(a, b) => {
                let (a, b) = (self.subst_inner(a, map, memo), self.subst_inner(b, map, memo));
                self.bvxor(a, b)
            }
            Node::Shl(a, b) => {
                let (a, b) = (self.subst_inner(a, map, memo), self.subst_inner(b, map, memo));
                self.shl(a, b)
            }
            Node::Lshr(a, b) => {
                let (a, b) = (self.subst_inner(a, map, memo), self.subst_inner(b, map, memo));
                self.lshr(a, b)
            }
            Node::Ashr(a, b) => {
                let (a, b) = (self.subst_inner(a, map, memo), self.subst_inner(b, map, memo));
                self.ashr(a, b)
            }
            Node::Neg(a) => {
                let a = self.subst_inner(a, map, memo);
                self.neg(a)
            }
            Node::Concat(a, b) => {
                let (a, b) = (self.subst_inner(a, map, memo), self.subst_inner(b, map, memo));
                self.concat(a, b)
            }
            Node::Extract { hi, lo, arg } => {
                let arg = self.subst_inner(arg, map, memo);
                self.extract(hi, lo, arg)
            }
            Node::Select { arr, idx } => {
                let (arr, idx) = (self.subst_inner(arr, map, memo), self.subst_inner(idx, map, memo));
                self.select(arr, idx)
            }
            Node::Store { arr, idx, val } => {
                let arr = self.subst_inner(arr, map, memo);
                let idx = self.subst_inner(idx, map, memo);
                let val = self.subst_inner(val, map, memo);
                self.store(arr, idx, val)
            }
            Node::Eq(a, b) => {
                let (a, b) = (self.subst_inner(a, map, memo), self.subst_inner(b, map, memo));
                self.eq(a, b)
            }
            Node::Not(a) => {
                let a = self.subst_inner(a, map, memo);
                self.not(a)
            }
            Node::BoolAnd(a, b) => {
                let (a, b) = (self.subst_inner(a, map, memo), self.subst_inner(b, map, memo));
                self.bool_and(a, b)
            }
            Node::BoolOr(a, b) => {
                let (a, b) = (self.subst_inner(a, map, memo), self.subst_inner(b, map, memo));
                self.bool_or(a, b)
            }
            Node::Ite { cond, then, otherwise } => {
                let c = self.subst_inner(cond, map, memo);
                let t = self.subst_inner(then, map, memo);
                let e = self.subst_inner(otherwise, map, memo);
                self.ite(c, t, e)
            }
        };
        memo.insert(term, out);
        out
    }

    /// Copy a term from another arena into this one, instantiating its free
    /// variables via `var_map` (source variable index to local term). Every
    /// free variable of the source term must be mapped.
    pub fn import(
        &mut self,
        src: &Arena,
        term: TermId,
        var_map: &HashMap<u32, TermId>,
        memo: &mut HashMap<TermId, TermId>,
    ) -> TermId {
        if let Some(t) = memo.get(&term) {
            return *t;
        }
        let out = match src.node(term) {
            Node::Const { bits, value } => self.bv(bits, value),
            Node::BoolConst(b) => self.bool_const(b),
            Node::Var(i) => *var_map
                .get(&i)
                .unwrap_or_else(|| panic!("unmapped variable {}", src.var_info(i).name)),
            Node::Add(a, b) => {
                let (a, b) = (self.import(src, a, var_map, memo), self.import(src, b, var_map, memo));
                self.add(a, b)
            }
            Node::Sub(a, b) => {
                let (a, b) = (self.import(src, a, var_map, memo), self.import(src, b, var_map, memo));
                self.sub(a, b)
            }
            Node::And(a, b) => {
                let (a, b) = (self.import(src, a, var_map, memo), self.import(src, b, var_map, memo));
                self.bvand(a, b)
            }
            Node::Or(a, b) => {
                let (a, b) = (self.import(src, a, var_map, memo), self.import(src, b, var_map, memo));
                self.bvor(a, b)
            }
            Node::Xor(a, b) => {
                let (a, b) = (self.import(src, a, var_map, memo), self.import(src, b, var_map, memo));
                self.bvxor(a, b)
            }
            Node::Shl(a, b) => {
                let (a, b) = (self.import(src, a, var_map, memo), self.import(src, b, var_map, memo));
                self.shl(a, b)
            }
            Node::Lshr(a, b) => {
                let (a, b) = (self.import(src, a, var_map, memo), self.import(src, b, var_map, memo));
                self.lshr(a, b)
            }
            Node::Ashr(a, b) => {
                let (a, b) = (self.import(src, a, var_map, memo), self.import(src, b, var_map, memo));
                self.ashr(a, b)
            }
            Node::Neg(a) => {
                let a = self.import(src, a, var_map, memo);
                self.neg(a)
            }
            Node::Concat(a, b) => {
                let (a, b) = (self.import(src, a, var_map, memo), self.import(src, b, var_map, memo));
                self.concat(a, b)
            }
            Node::Extract { hi, lo, arg } => {
                let arg = self.import(src, arg, var_map, memo);
                self.extract(hi, lo, arg)
            }
            Node::Select { arr, idx } => {
                let (arr, idx) =
                    (self.import(src, arr, var_map, memo), self.import(src, idx, var_map, memo));
                self.select(arr, idx)
            }
            Node::Store { arr, idx, val } => {
                let arr = self.import(src, arr, var_map, memo);
                let idx = self.import(src, idx, var_map, memo);
                let val = self.import(src, val, var_map, memo);
                self.store(arr, idx, val)
            }
            Node::Eq(a, b) => {
                let (a, b) = (self.import(src, a, var_map, memo), self.import(src, b, var_map, memo));
                self.eq(a, b)
            }
            Node::Not(a) => {
                let a = self.import(src, a, var_map, memo);
                self.not(a)
            }
            Node::BoolAnd(a, b) => {
                let (a, b) = (self.import(src, a, var_map, memo), self.import(src, b, var_map, memo));
                self.bool_and(a, b)
            }
            Node::BoolOr(a, b) => {
                let (a, b) = (self.import(src, a, var_map, memo), self.import(src, b, var_map, memo));
                self.bool_or(a, b)
            }
            Node::Ite { cond, then, otherwise } => {
                let c = self.import(src, cond, var_map, memo);
                let t = self.import(src, then, var_map, memo);
                let e = self.import(src, otherwise, var_map, memo);
                self.ite(c, t, e)
            }
        };
        memo.insert(term, out);
        out
    }

    /// Render a term as an SMT-LIB v2 s-expression.
    pub fn smt2(&self, t: TermId) -> String {
        let mut s = String::new();
        self.smt2_into(t, &mut s);
        s
    }

    fn smt2_into(&self, t: TermId, out: &mut String) {
        match self.node(t) {
            Node::Const { bits, value } => {
                if bits % 4 == 0 {
                    let _ = write!(out, "#x{value:0width$x}", width = bits as usize / 4);
                } else {
                    let _ = write!(out, "(_ bv{value} {bits})");
                }
            }
            Node::BoolConst(b) => {
                let _ = write!(out, "{b}");
            }
            Node::Var(i) => out.push_str(&self.vars[i as usize].name),
            Node::Add(a, b) => self.sexpr2("bvadd", a, b, out),
            Node::Sub(a, b) => self.sexpr2("bvsub", a, b, out),
            Node::And(a, b) => self.sexpr2("bvand", a, b, out),
            Node::Or(a, b) => self.sexpr2("bvor", a, b, out),
            Node::Xor(a, b) => self.sexpr2("bvxor", a, b, out),
            Node::Shl(a, b) => self.sexpr2("bvshl", a, b, out),
            Node::Lshr(a, b) => self.sexpr2("bvlshr", a, b, out),
            Node::Ashr(a, b) => self.sexpr2("bvashr", a, b, out),
            Node::Neg(a) => {
                out.push_str("(bvneg ");
                self.smt2_into(a, out);
                out.push(')');
            }
            Node::Concat(a, b) => self.sexpr2("concat", a, b, out),
            Node::Extract { hi, lo, arg } => {
                let _ = write!(out, "((_ extract {hi} {lo}) ");
                self.smt2_into(arg, out);
                out.push(')');
            }
            Node::Select { arr, idx } => self.sexpr2("select", arr, idx, out),
            Node::Store { arr, idx, val } => {
                out.push_str("(store ");
                self.smt2_into(arr, out);
                out.push(' ');
                self.smt2_into(idx, out);
                out.push(' ');
                self.smt2_into(val, out);
                out.push(')');
            }
            Node::Eq(a, b) => self.sexpr2("=", a, b, out),
            Node::Not(a) => {
                out.push_str("(not ");
                self.smt2_into(a, out);
                out.push(')');
            }
            Node::BoolAnd(a, b) => self.sexpr2("and", a, b, out),
            Node::BoolOr(a, b) => self.sexpr2("or", a, b, out),
            Node::Ite { cond, then, otherwise } => {
                out.push_str("(ite ");
                self.smt2_into(cond, out);
                out.push(' ');
                self.smt2_into(then, out);
                out.push(' ');
                self.smt2_into(otherwise, out);
                out.push(')');
            }
        }
    }

    fn sexpr2(&self, op: &str, a: TermId, b: TermId, out: &mut String) {
        out.push('(');
        out.push_str(op);
        out.push(' ');
        self.smt2_into(a, out);
        out.push(' ');
        self.smt2_into(b, out);
        out.push(')');
    }

    /// Collect free variable indices appearing in a term.
    pub fn free_vars(&self, t: TermId, out: &mut std::collections::BTreeSet<u32>) {
        match self.node(t) {
            Node::Const { .. } | Node::BoolConst(_) => {}
            Node::Var(i) => {
                out.insert(i);
            }
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::And(a, b)
            | Node::Or(a, b)
            | Node::Xor(a, b)
            | Node::Shl(a, b)
            | Node::Lshr(a, b)
            | Node::Ashr(a, b)
            | Node::Concat(a, b)
            | Node::Eq(a, b)
            | Node::BoolAnd(a, b)
            | Node::BoolOr(a, b)
            | Node::Select { arr: a, idx: b } => {
                self.free_vars(a, out);
                self.free_vars(b, out);
            }
            Node::Neg(a) | Node::Not(a) | Node::Extract { arg: a, .. } => self.free_vars(a, out),
            Node::Store { arr, idx, val } => {
                self.free_vars(arr, out);
                self.free_vars(idx, out);
                self.free_vars(val, out);
            }
            Node::Ite { cond, then, otherwise } => {
                self.free_vars(cond, out);
                self.free_vars(then, out);
                self.free_vars(otherwise, out);
            }
        }
    }
}

/// Concrete array value: a base function identified by variable index, plus
/// an overlay of stored bytes.
#[derive(Debug, Clone)]
pub enum ArrayVal {
    Base(u32),
    Stored(Rc<ArrayVal>, u64, u8),
}

impl ArrayVal {
    fn select(&self, idx: u64, base: &dyn Fn(u32, u64) -> u8) -> u8 {
        let mut cur = self;
        loop {
            match cur {
                ArrayVal::Base(var) => return base(*var, idx),
                ArrayVal::Stored(prev, a, b) => {
                    if *a == idx {
                        return *b;
                    }
                    cur = prev;
                }
            }
        }
    }

    fn flatten(&self) -> (u32, HashMap<u64, u8>) {
        let mut overlay = HashMap::new();
        let mut chain = Vec::new();
        let mut cur = self;
        loop {
            match cur {
                ArrayVal::Base(var) => {
                    // later stores win, so replay oldest-first
                    for (a, b) in chain.into_iter().rev() {
                        overlay.insert(a, b);
                    }
                    return (*var, overlay);
                }
                ArrayVal::Stored(prev, a, b) => {
                    chain.push((*a, *b));
                    cur = prev;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Value {
    /// Bitvector value and width; u128 leaves room for the 65-bit
    /// carry/borrow intermediates the symbolic executor builds.
    Bv(u128, u32),
    Bool(bool),
    Array(Rc<ArrayVal>),
}

impl Value {
    pub fn as_u64(&self) -> u64 {
        match self {
            Value::Bv(v, _) => *v as u64,
            _ => panic!("expected bitvector value"),
        }
    }

    pub fn as_bool(&self) -> bool {
        match self {
            Value::Bool(b) => *b,
            _ => panic!("expected boolean value"),
        }
    }
}

/// Assignment of free variables for concrete evaluation.
pub struct Assignment<'a> {
    /// Values for bitvector/boolean variables by index.
    pub bv: HashMap<u32, u64>,
    pub bools: HashMap<u32, bool>,
    /// Concrete array values for derived (SSA-defined) array variables.
    pub arrays: HashMap<u32, Rc<ArrayVal>>,
    /// Byte content behind each free array variable.
    pub mem: &'a dyn Fn(u32, u64) -> u8,
}

impl<'a> Assignment<'a> {
    pub fn new(mem: &'a dyn Fn(u32, u64) -> u8) -> Assignment<'a> {
        Assignment {
            bv: HashMap::new(),
            bools: HashMap::new(),
            arrays: HashMap::new(),
            mem,
        }
    }
}

pub struct Evaluator<'a> {
    arena: &'a Arena,
    assign: &'a Assignment<'a>,
    memo: HashMap<TermId, Value>,
}

impl<'a> Evaluator<'a> {
    pub fn new(arena: &'a Arena, assign: &'a Assignment<'a>) -> Evaluator<'a> {
        Evaluator {
            arena,
            assign,
            memo: HashMap::new(),
        }
    }

    pub fn eval(&mut self, t: TermId) -> Value {
        if let Some(v) = self.memo.get(&t) {
            return v.clone();
        }
        let v = self.eval_inner(t);
        self.memo.insert(t, v.clone());
        v
    }

    pub fn eval_u64(&mut self, t: TermId) -> u64 {
        self.eval(t).as_u64()
    }

    pub fn eval_bool(&mut self, t: TermId) -> bool {
        self.eval(t).as_bool()
    }

    fn bvv(&mut self, t: TermId) -> (u128, u32) {
        match self.eval(t) {
            Value::Bv(v, w) => (v, w),
            _ => panic!("expected bitvector"),
        }
    }

    fn eval_inner(&mut self, t: TermId) -> Value {
        let mask = |w: u32| {
            if w >= 128 {
                u128::MAX
            } else {
                (1u128 << w) - 1
            }
        };
        match self.arena.node(t) {
            Node::Const { bits, value } => Value::Bv(value as u128, bits),
            Node::BoolConst(b) => Value::Bool(b),
            Node::Var(i) => match self.arena.var_info(i).sort {
                Sort::Bv(w) => Value::Bv(
                    (self.assign.bv.get(&i).copied().unwrap_or(0) as u128) & mask(w),
                    w,
                ),
                Sort::Bool => Value::Bool(self.assign.bools.get(&i).copied().unwrap_or(false)),
                Sort::Array => match self.assign.arrays.get(&i) {
                    Some(a) => Value::Array(a.clone()),
                    None => Value::Array(Rc::new(ArrayVal::Base(i))),
                },
            },
            Node::Add(a, b) => {
                let ((x, w), (y, _)) = (self.bvv(a), self.bvv(b));
                Value::Bv(x.wrapping_add(y) & mask(w), w)
            }
            Node::Sub(a, b) => {
                let ((x, w), (y, _)) = (self.bvv(a), self.bvv(b));
                Value::Bv(x.wrapping_sub(y) & mask(w), w)
            }
            Node::And(a, b) => {
                let ((x, w), (y, _)) = (self.bvv(a), self.bvv(b));
                Value::Bv(x & y, w)
            }
            Node::Or(a, b) => {
                let ((x, w), (y, _)) = (self.bvv(a), self.bvv(b));
                Value::Bv(x | y, w)
            }
            Node::Xor(a, b) => {
                let ((x, w), (y, _)) = (self.bvv(a), self.bvv(b));
                Value::Bv(x ^ y, w)
            }
            Node::Shl(a, b) => {
                let ((x, w), (y, _)) = (self.bvv(a), self.bvv(b));
                let v = if y >= w as u128 { 0 } else { x << y };
                Value::Bv(v & mask(w), w)
            }
            Node::Lshr(a, b) => {
                let ((x, w), (y, _)) = (self.bvv(a), self.bvv(b));
                let v = if y >= w as u128 { 0 } else { x >> y };
                Value::Bv(v, w)
            }
            Node::Ashr(a, b) => {
                let ((x, w), (y, _)) = (self.bvv(a), self.bvv(b));
                let sign = (x >> (w - 1)) & 1 == 1;
                let v = if y == 0 {
                    x
                } else if y >= w as u128 {
                    if sign {
                        mask(w)
                    } else {
                        0
                    }
                } else {
                    let shifted = x >> y;
                    if sign {
                        shifted | (mask(w) << (w as u128 - y) & mask(w))
                    } else {
                        shifted
                    }
                };
                Value::Bv(v & mask(w), w)
            }
            Node::Neg(a) => {
                let (x, w) = self.bvv(a);
                Value::Bv(x.wrapping_neg() & mask(w), w)
            }
            Node::Concat(a, b) => {
                let ((hi, wh), (lo, wl)) = (self.bvv(a), self.bvv(b));
                debug_assert!(wh + wl <= 128);
                Value::Bv((hi << wl) | lo, wh + wl)
            }
            Node::Extract { hi, lo, arg } => {
                let (x, _) = self.bvv(arg);
                let w = hi - lo + 1;
                Value::Bv((x >> lo) & mask(w), w)
            }
            Node::Select { arr, idx } => {
                let a = match self.eval(arr) {
                    Value::Array(a) => a,
                    _ => panic!("select on non-array"),
                };
                let i = self.eval_u64(idx);
                Value::Bv(a.select(i, self.assign.mem) as u128, 8)
            }
            Node::Store { arr, idx, val } => {
                let a = match self.eval(arr) {
                    Value::Array(a) => a,
                    _ => panic!("store on non-array"),
                };
                let i = self.eval_u64(idx);
                let v = self.eval_u64(val) as u8;
                Value::Array(Rc::new(ArrayVal::Stored(a, i, v)))
            }
            Node::Eq(a, b) => match (self.eval(a), self.eval(b)) {
                (Value::Bv(x, _), Value::Bv(y, _)) => Value::Bool(x == y),
                (Value::Bool(x), Value::Bool(y)) => Value::Bool(x == y),
                (Value::Array(x), Value::Array(y)) => {
                    let (bx, ox) = x.flatten();
                    let (by, oy) = y.flatten();
                    if bx != by {
                        panic!("array equality over distinct base arrays");
                    }
                    let eq = ox
                        .keys()
                        .chain(oy.keys())
                        .all(|addr| {
                            let base = (self.assign.mem)(bx, *addr);
                            let vx = ox.get(addr).copied().unwrap_or(base);
                            let vy = oy.get(addr).copied().unwrap_or(base);
                            vx == vy
                        });
                    Value::Bool(eq)
                }
                _ => panic!("eq sort mismatch"),
            },
            Node::Not(a) => Value::Bool(!self.eval_bool(a)),
            Node::BoolAnd(a, b) => Value::Bool(self.eval_bool(a) && self.eval_bool(b)),
            Node::BoolOr(a, b) => Value::Bool(self.eval_bool(a) || self.eval_bool(b)),
            Node::Ite { cond, then, otherwise } => {
                if self.eval_bool(cond) {
                    self.eval(then)
                } else {
                    self.eval(otherwise)
                }
            }
        }
    }
}

/// Free-variable assignment for the linear evaluator.
pub struct FreeVars<'a> {
    pub bv: HashMap<u32, u64>,
    pub bools: HashMap<u32, bool>,
    pub mem: &'a dyn Fn(u32, u64) -> u8,
}

impl<'a> FreeVars<'a> {
    pub fn new(mem: &'a dyn Fn(u32, u64) -> u8) -> FreeVars<'a> {
        FreeVars {
            bv: HashMap::new(),
            bools: HashMap::new(),
            mem,
        }
    }
}

/// Evaluate every node of the arena bottom-up in one pass and return the
/// value of `target`. Derived variables (present in `defs`) take the value
/// of their defining term, which the arena's construction order guarantees
/// to be available first. Much cheaper than memoized recursion when the
/// same arena is evaluated under thousands of assignments.
pub fn eval_linear(
    arena: &Arena,
    defs: &HashMap<u32, TermId>,
    free: &FreeVars,
    target: TermId,
) -> Value {
    let values = eval_linear_table(arena, defs, free, target);
    values[target.0 as usize].clone().expect("target evaluated")
}

fn eval_linear_table(
    arena: &Arena,
    defs: &HashMap<u32, TermId>,
    free: &FreeVars,
    target: TermId,
) -> Vec<Option<Value>> {
    let _n = target.0 as usize + 1;
    let mut values: Vec<Option<Value>> = vec![None; arena.len()];
    let mask = |w: u32| {
        if w >= 128 {
            u128::MAX
        } else {
            (1u128 << w) - 1
        }
    };
    let bv = |values: &Vec<Option<Value>>, t: TermId| -> (u128, u32) {
        match values[t.0 as usize].as_ref().expect("child evaluated") {
            Value::Bv(v, w) => (*v, *w),
            _ => panic!("expected bitvector"),
        }
    };
    let bl = |values: &Vec<Option<Value>>, t: TermId| -> bool {
        match values[t.0 as usize].as_ref().expect("child evaluated") {
            Value::Bool(b) => *b,
            _ => panic!("expected bool"),
        }
    };
    let arr = |values: &Vec<Option<Value>>, t: TermId| -> Rc<ArrayVal> {
        match values[t.0 as usize].as_ref().expect("child evaluated") {
            Value::Array(a) => a.clone(),
            _ => panic!("expected array"),
        }
    };

    for i in 0..arena.len() {
        let t = TermId(i as u32);
        let v = match arena.node(t) {
            Node::Const { bits, value } => Value::Bv(value as u128, bits),
            Node::BoolConst(b) => Value::Bool(b),
            Node::Var(idx) => match arena.var_info(idx).sort {
                Sort::Bv(w) => match defs.get(&idx) {
                    Some(def) => values[def.0 as usize].clone().expect("def precedes var"),
                    None => Value::Bv(
                        (free.bv.get(&idx).copied().unwrap_or(0) as u128) & mask(w),
                        w,
                    ),
                },
                Sort::Bool => match defs.get(&idx) {
                    Some(def) => values[def.0 as usize].clone().expect("def precedes var"),
                    None => Value::Bool(free.bools.get(&idx).copied().unwrap_or(false)),
                },
                Sort::Array => match defs.get(&idx) {
                    Some(def) => values[def.0 as usize].clone().expect("def precedes var"),
                    None => Value::Array(Rc::new(ArrayVal::Base(idx))),
                },
            },
            Node::Add(a, b) => {
                let ((x, w), (y, _)) = (bv(&values, a), bv(&values, b));
                Value::Bv(x.wrapping_add(y) & mask(w), w)
            }
            Node::Sub(a, b) => {
                let ((x, w), (y, _)) = (bv(&values, a), bv(&values, b));
                Value::Bv(x.wrapping_sub(y) & mask(w), w)
            }
            Node::And(a, b) => {
                let ((x, w), (y, _)) = (bv(&values, a), bv(&values, b));
                Value::Bv(x & y, w)
            }
            Node::Or(a, b) => {
                let ((x, w), (y, _)) = (bv(&values, a), bv(&values, b));
                Value::Bv(x | y, w)
            }
            Node::Xor(a, b) => {
                let ((x, w), (y, _)) = (bv(&values, a), bv(&values, b));
                Value::Bv(x ^ y, w)
            }
            Node::Shl(a, b) => {
                let ((x, w), (y, _)) = (bv(&values, a), bv(&values, b));
                let v = if y >= w as u128 { 0 } else { x << y };
                Value::Bv(v & mask(w), w)
            }
            Node::Lshr(a, b) => {
                let ((x, w), (y, _)) = (bv(&values, a), bv(&values, b));
                let v = if y >= w as u128 { 0 } else { x >> y };
                Value::Bv(v, w)
            }
            Node::Ashr(a, b) => {
                let ((x, w), (y, _)) = (bv(&values, a), bv(&values, b));
                let sign = (x >> (w - 1)) & 1 == 1;
                let v = if y == 0 {
                    x
                } else if y >= w as u128 {
                    if sign {
                        mask(w)
                    } else {
                        0
                    }
                } else {
                    let shifted = x >> y;
                    if sign {
                        shifted | (mask(w) << (w as u128 - y) & mask(w))
                    } else {
                        shifted
                    }
                };
                Value::Bv(v & mask(w), w)
            }
            Node::Neg(a) => {
                let (x, w) = bv(&values, a);
                Value::Bv(x.wrapping_neg() & mask(w), w)
            }
            Node::Concat(a, b) => {
                let ((hi, wh), (lo, wl)) = (bv(&values, a), bv(&values, b));
                Value::Bv((hi << wl) | lo, wh + wl)
            }
            Node::Extract { hi, lo, arg } => {
                let (x, _) = bv(&values, arg);
                let w = hi - lo + 1;
                Value::Bv((x >> lo) & mask(w), w)
            }
            Node::Select { arr: a, idx } => {
                let array = arr(&values, a);
                let (i, _) = bv(&values, idx);
                Value::Bv(array.select(i as u64, free.mem) as u128, 8)
            }
            Node::Store { arr: a, idx, val } => {
                let array = arr(&values, a);
                let (i, _) = bv(&values, idx);
                let (b, _) = bv(&values, val);
                Value::Array(Rc::new(ArrayVal::Stored(array, i as u64, b as u8)))
            }
            Node::Eq(a, b) => {
                let va = values[a.0 as usize].as_ref().expect("child");
                let vb = values[b.0 as usize].as_ref().expect("child");
                match (va, vb) {
                    (Value::Bv(x, _), Value::Bv(y, _)) => Value::Bool(x == y),
                    (Value::Bool(x), Value::Bool(y)) => Value::Bool(x == y),
                    (Value::Array(x), Value::Array(y)) => {
                        let (bx, ox) = x.flatten();
                        let (by, oy) = y.flatten();
                        assert_eq!(bx, by, "array equality over distinct bases");
                        let eq = ox.keys().chain(oy.keys()).all(|addr| {
                            let base = (free.mem)(bx, *addr);
                            ox.get(addr).copied().unwrap_or(base)
                                == oy.get(addr).copied().unwrap_or(base)
                        });
                        Value::Bool(eq)
                    }
                    _ => panic!("eq sort mismatch"),
                }
            }
            Node::Not(a) => Value::Bool(!bl(&values, a)),
            Node::BoolAnd(a, b) => Value::Bool(bl(&values, a) && bl(&values, b)),
            Node::BoolOr(a, b) => Value::Bool(bl(&values, a) || bl(&values, b)),
            Node::Ite { cond, then, otherwise } => {
                if bl(&values, cond) {
                    values[then.0 as usize].clone().expect("child")
                } else {
                    values[otherwise.0 as usize].clone().expect("child")
                }
            }
        };
        values[i] = Some(v);
    }
    values
}

/// Like `eval_linear`, but returns the whole value table so callers can read
/// off many terms from one pass.
pub fn eval_all(
    arena: &Arena,
    defs: &HashMap<u32, TermId>,
    free: &FreeVars,
) -> Vec<Option<Value>> {
    if arena.is_empty() {
        return Vec::new();
    }
    let last = TermId(arena.len() as u32 - 1);
    eval_linear_table(arena, defs, free, last)
}
