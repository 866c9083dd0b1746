#include "mtask/lang.hpp"

#include <bit>
#include <cstring>

namespace mtask {

namespace {

constexpr std::uint8_t kMagic[4] = {'M', 'T', 'P', 'G'};
constexpr std::uint8_t kFormatVersion = 1;
constexpr int kMaxNesting = 64;

enum Tag : std::uint8_t { TagExpr = 0x10, TagTask = 0x11, TagCont = 0x12, TagFun = 0x20, TagSds = 0x21, TagPeriph = 0x22 };

template <class U>
void put_uint(std::vector<std::uint8_t>& out, U v, bool be)
{
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        std::size_t shift = be ? (sizeof(U) - 1 - i) * 8 : i * 8;
        out.push_back(static_cast<std::uint8_t>(v >> shift));
    }
}

template <class U>
U get_uint(const std::uint8_t*& p, const std::uint8_t* end, bool be)
{
    if (end - p < static_cast<std::ptrdiff_t>(sizeof(U))) throw FormatError("truncated");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        std::size_t shift = be ? (sizeof(U) - 1 - i) * 8 : i * 8;
        v |= static_cast<U>(static_cast<U>(p[i]) << shift);
    }
    p += sizeof(U);
    return v;
}

std::uint8_t get_u8(const std::uint8_t*& p, const std::uint8_t* end)
{
    return get_uint<std::uint8_t>(p, end, true);
}

} // namespace

void put_type(std::vector<std::uint8_t>& out, const Type& t)
{
    out.push_back(static_cast<std::uint8_t>(t.kind()));
    if (t.is_pair()) {
        put_type(out, t.first());
        put_type(out, t.second());
    }
}

Type get_type(const std::uint8_t*& p, const std::uint8_t* end, int depth)
{
    if (depth > kMaxNesting) throw FormatError("type nesting too deep");
    switch (static_cast<TypeKind>(get_u8(p, end))) {
    case TypeKind::Int: return Type::integer();
    case TypeKind::Bool: return Type::boolean();
    case TypeKind::Real: return Type::real();
    case TypeKind::Unit: return Type::unit();
    case TypeKind::Pair: {
        Type a = get_type(p, end, depth + 1);
        Type b = get_type(p, end, depth + 1);
        return Type::pair(a, b);
    }
    }
    throw FormatError("bad type tag");
}

void put_value(std::vector<std::uint8_t>& out, const DynValue& v, ValueLayout layout)
{
    bool be = layout == ValueLayout::Wire;
    out.push_back(static_cast<std::uint8_t>(v.kind()));
    switch (v.kind()) {
    case TypeKind::Int: put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(v.as_int()), be); break;
    case TypeKind::Bool: out.push_back(v.as_bool() ? 1 : 0); break;
    case TypeKind::Real:
        if (be)
            put_uint<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v.as_real()), true);
        else
            put_uint<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v.as_real())), false);
        break;
    case TypeKind::Unit: break;
    case TypeKind::Pair:
        put_value(out, v.first(), layout);
        put_value(out, v.second(), layout);
        break;
    }
}

DynValue get_value(const std::uint8_t*& p, const std::uint8_t* end, ValueLayout layout, int depth)
{
    if (depth > kMaxNesting) throw FormatError("value nesting too deep");
    bool be = layout == ValueLayout::Wire;
    switch (static_cast<TypeKind>(get_u8(p, end))) {
    case TypeKind::Int: return DynValue::integer(static_cast<std::int32_t>(get_uint<std::uint32_t>(p, end, be)));
    case TypeKind::Bool: {
        std::uint8_t b = get_u8(p, end);
        if (b > 1) throw FormatError("bad Bool byte");
        return DynValue::boolean(b == 1);
    }
    case TypeKind::Real:
        if (be) return DynValue::real(std::bit_cast<double>(get_uint<std::uint64_t>(p, end, true)));
        return DynValue::real(std::bit_cast<float>(get_uint<std::uint32_t>(p, end, false)));
    case TypeKind::Unit: return DynValue::unit();
    case TypeKind::Pair: {
        DynValue a = get_value(p, end, layout, depth + 1);
        DynValue b = get_value(p, end, layout, depth + 1);
        return DynValue::pair(a, b);
    }
    }
    throw FormatError("bad value tag");
}

namespace {

class Writer {
public:
    std::vector<std::uint8_t> out;

    // tag, u32 BE length, payload
    template <class F>
    void node(std::uint8_t tag, F&& body)
    {
        out.push_back(tag);
        std::size_t at = out.size();
        put_uint<std::uint32_t>(out, 0, true);
        body();
        auto len = static_cast<std::uint32_t>(out.size() - at - 4);
        for (int i = 0; i < 4; ++i) out[at + i] = static_cast<std::uint8_t>(len >> (24 - 8 * i));
    }

    void u8(std::uint8_t v) { out.push_back(v); }
    void pin(Pin p)
    {
        u8(static_cast<std::uint8_t>(p.bank));
        u8(p.index);
    }
    void str(const std::string& s)
    {
        put_uint<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()), true);
        out.insert(out.end(), s.begin(), s.end());
    }

    void expr(const Expr& e)
    {
        node(TagExpr, [&] {
            u8(static_cast<std::uint8_t>(e.kind));
            switch (e.kind) {
            case Expr::Kind::Lit: put_value(out, e.lit, ValueLayout::Wire); break;
            case Expr::Kind::Arith: u8(static_cast<std::uint8_t>(e.arith)); break;
            case Expr::Kind::Cmp: u8(static_cast<std::uint8_t>(e.cmp)); break;
            case Expr::Kind::Logic: u8(static_cast<std::uint8_t>(e.logic)); break;
            case Expr::Kind::Arg: u8(e.slot); break;
            case Expr::Kind::Call: u8(e.fun); break;
            default: break;
            }
            u8(static_cast<std::uint8_t>(e.kids.size()));
            for (auto& k : e.kids) expr(*k);
        });
    }

    void task(const TaskExpr& t)
    {
        node(TagTask, [&] {
            u8(static_cast<std::uint8_t>(t.kind));
            u8(t.ref);
            pin(t.pin);
            u8(t.implicit ? 1 : 0);
            u8(static_cast<std::uint8_t>(t.args.size()));
            for (auto& a : t.args) expr(*a);
            u8(static_cast<std::uint8_t>(t.kids.size()));
            for (auto& k : t.kids) task(*k);
            u8(static_cast<std::uint8_t>(t.conts.size()));
            for (auto& c : t.conts) {
                node(TagCont, [&] {
                    u8(static_cast<std::uint8_t>(c.kind));
                    u8(c.binder == kNoBinder ? 0xFF : static_cast<std::uint8_t>(c.binder));
                    u8(c.pred ? 1 : 0);
                    if (c.pred) expr(*c.pred);
                    task(*c.body);
                });
            }
        });
    }
};

class Reader {
public:
    Reader(const std::uint8_t* p, const std::uint8_t* end) : p_(p), end_(end) {}

    bool done() const { return p_ == end_; }

    std::uint8_t u8() { return get_u8(p_, end_); }
    Pin pin()
    {
        Pin p;
        std::uint8_t bank = u8();
        if (bank > 1) throw FormatError("bad pin bank");
        p.bank = static_cast<Pin::Bank>(bank);
        p.index = u8();
        return p;
    }
    std::string str()
    {
        auto n = get_uint<std::uint16_t>(p_, end_, true);
        if (end_ - p_ < n) throw FormatError("truncated");
        std::string s(reinterpret_cast<const char*>(p_), n);
        p_ += n;
        return s;
    }
    DynValue value() { return get_value(p_, end_, ValueLayout::Wire); }
    Type type() { return get_type(p_, end_); }

    // Enter a TLV node: returns a reader over its payload and skips past it.
    Reader enter(std::uint8_t tag)
    {
        if (u8() != tag) throw FormatError("unexpected node tag");
        auto len = get_uint<std::uint32_t>(p_, end_, true);
        if (static_cast<std::size_t>(end_ - p_) < len) throw FormatError("truncated");
        Reader r(p_, p_ + len);
        r.depth_ = depth_ + 1;
        if (r.depth_ > 4 * kMaxNesting) throw FormatError("nesting too deep");
        p_ += len;
        return r;
    }

    void finish() const
    {
        if (!done()) throw FormatError("trailing bytes in node");
    }

    ExprPtr expr()
    {
        Reader r = enter(TagExpr);
        auto e = std::make_shared<Expr>();
        std::uint8_t kind = r.u8();
        if (kind > static_cast<std::uint8_t>(Expr::Kind::Call)) throw FormatError("bad expression kind");
        e->kind = static_cast<Expr::Kind>(kind);
        switch (e->kind) {
        case Expr::Kind::Lit: e->lit = r.value(); break;
        case Expr::Kind::Arith: e->arith = static_cast<ArithOp>(r.bounded(3)); break;
        case Expr::Kind::Cmp: e->cmp = static_cast<CmpOp>(r.bounded(5)); break;
        case Expr::Kind::Logic: e->logic = static_cast<LogicOp>(r.bounded(1)); break;
        case Expr::Kind::Arg: e->slot = r.u8(); break;
        case Expr::Kind::Call: e->fun = r.u8(); break;
        default: break;
        }
        std::uint8_t n = r.u8();
        for (int i = 0; i < n; ++i) e->kids.push_back(r.expr());
        r.finish();
        return e;
    }

    TaskPtr task()
    {
        Reader r = enter(TagTask);
        auto t = std::make_shared<TaskExpr>();
        std::uint8_t kind = r.u8();
        if (kind > static_cast<std::uint8_t>(TaskExpr::Kind::LmDisplay)) throw FormatError("bad task kind");
        t->kind = static_cast<TaskExpr::Kind>(kind);
        t->ref = r.u8();
        t->pin = r.pin();
        t->implicit = r.u8() != 0;
        std::uint8_t n = r.u8();
        for (int i = 0; i < n; ++i) t->args.push_back(r.expr());
        n = r.u8();
        for (int i = 0; i < n; ++i) t->kids.push_back(r.task());
        n = r.u8();
        for (int i = 0; i < n; ++i) {
            Reader c = r.enter(TagCont);
            StepCont sc;
            sc.kind = static_cast<StepCont::Kind>(c.bounded(4));
            std::uint8_t b = c.u8();
            sc.binder = b == 0xFF ? kNoBinder : b;
            if (c.u8()) sc.pred = c.expr();
            sc.body = c.task();
            c.finish();
            t->conts.push_back(std::move(sc));
        }
        r.finish();
        return t;
    }

    std::uint8_t bounded(std::uint8_t max)
    {
        std::uint8_t v = u8();
        if (v > max) throw FormatError("enum out of range");
        return v;
    }

private:
    const std::uint8_t* p_;
    const std::uint8_t* end_;
    int depth_ = 0;
};

} // namespace

std::vector<std::uint8_t> serialize(const Program& p)
{
    Writer w;
    w.out.assign(kMagic, kMagic + 4);
    w.u8(kFormatVersion);
    w.u8(static_cast<std::uint8_t>(p.sds.size()));
    for (auto& d : p.sds) {
        w.node(TagSds, [&] {
            w.u8(d.id);
            put_type(w.out, d.type);
            put_value(w.out, d.initial, ValueLayout::Wire);
            w.u8(d.lifted ? 1 : 0);
            w.str(d.key);
        });
    }
    w.u8(static_cast<std::uint8_t>(p.periphs.size()));
    for (auto& d : p.periphs) {
        w.node(TagPeriph, [&] {
            w.u8(d.id);
            w.u8(static_cast<std::uint8_t>(d.kind));
            w.pin(d.pin_a);
            w.pin(d.pin_b);
            w.u8(static_cast<std::uint8_t>(d.variant));
        });
    }
    w.u8(static_cast<std::uint8_t>(p.funs.size()));
    for (auto& f : p.funs) {
        w.node(TagFun, [&] {
            w.str(f.name);
            w.u8(f.is_task ? 1 : 0);
            w.u8(static_cast<std::uint8_t>(f.params.size()));
            for (auto& t : f.params) put_type(w.out, t);
            put_type(w.out, f.result);
            w.u8(f.frame_size);
            if (f.is_task)
                w.task(*f.task_body);
            else
                w.expr(*f.expr_body);
        });
    }
    w.u8(p.main_frame_size);
    w.task(*p.main);
    return w.out;
}

Program deserialize(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a program file");
    if (bytes[4] != kFormatVersion) throw FormatError("unsupported program file version");
    Reader r(bytes.data() + 5, bytes.data() + bytes.size());
    Program p;
    std::uint8_t n = r.u8();
    for (int i = 0; i < n; ++i) {
        Reader s = r.enter(TagSds);
        SdsDecl d;
        d.id = s.u8();
        d.type = s.type();
        d.initial = s.value();
        d.lifted = s.u8() != 0;
        d.key = s.str();
        s.finish();
        p.sds.push_back(d);
    }
    n = r.u8();
    for (int i = 0; i < n; ++i) {
        Reader s = r.enter(TagPeriph);
        PeriphDecl d;
        d.id = s.u8();
        d.kind = static_cast<PeriphDecl::Kind>(s.bounded(1));
        d.pin_a = s.pin();
        d.pin_b = s.pin();
        d.variant = static_cast<DhtVariant>(s.bounded(2));
        s.finish();
        p.periphs.push_back(d);
    }
    n = r.u8();
    for (int i = 0; i < n; ++i) {
        Reader s = r.enter(TagFun);
        FunDef f;
        f.name = s.str();
        f.is_task = s.u8() != 0;
        std::uint8_t np = s.u8();
        for (int k = 0; k < np; ++k) f.params.push_back(s.type());
        f.result = s.type();
        f.frame_size = s.u8();
        if (f.is_task)
            f.task_body = s.task();
        else
            f.expr_body = s.expr();
        s.finish();
        p.funs.push_back(std::move(f));
    }
    p.main_frame_size = r.u8();
    p.main = r.task();
    r.finish();
    return p;
}

} // namespace mtask
