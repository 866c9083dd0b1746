#include "mtask/bytecode.hpp"

#include <sstream>

namespace mtask {

namespace {

using K = TaskExpr::Kind;

void put16(std::vector<std::uint8_t>& out, std::uint16_t v)
{
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

class In {
public:
    In(const std::uint8_t* p, const std::uint8_t* end) : p_(p), end_(end) {}

    std::uint8_t u8()
    {
        need(1);
        return *p_++;
    }
    std::uint16_t u16()
    {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p_[0] | (p_[1] << 8));
        p_ += 2;
        return v;
    }
    std::vector<std::uint8_t> bytes(std::size_t n)
    {
        need(n);
        std::vector<std::uint8_t> v(p_, p_ + n);
        p_ += n;
        return v;
    }
    DynValue value()
    {
        try {
            return get_value(p_, end_, ValueLayout::Image);
        } catch (const FormatError& e) {
            throw MalformedImage(std::string("literal: ") + e.what());
        }
    }
    Type type()
    {
        try {
            return get_type(p_, end_);
        } catch (const FormatError& e) {
            throw MalformedImage(std::string("type: ") + e.what());
        }
    }
    Pin pin()
    {
        std::uint8_t bank = u8();
        if (bank > 1) throw MalformedImage("bad pin bank");
        return {static_cast<Pin::Bank>(bank), u8()};
    }
    bool done() const { return p_ == end_; }

private:
    void need(std::size_t n) const
    {
        if (static_cast<std::size_t>(end_ - p_) < n) throw MalformedImage("truncated");
    }

    const std::uint8_t* p_;
    const std::uint8_t* end_;
};

bool valid_op(std::uint8_t b)
{
    return b == 0x01 || b == 0x02 || (b >= 0x10 && b <= 0x13) || (b >= 0x20 && b <= 0x25) || (b >= 0x30 && b <= 0x32) ||
           b == 0x40 || b == 0x41 || (b >= 0x50 && b <= 0x52) || b == 0x60 || (b >= 0x70 && b <= 0x72);
}

std::string task_mnemonic(K k)
{
    switch (k) {
    case K::Rtrn: return "RTRN";
    case K::Rpeat: return "RPEAT";
    case K::Delay: return "DELAY";
    case K::And: return "AND";
    case K::Or: return "OR";
    case K::Step: return "STEP";
    case K::Call: return "CALL";
    case K::If: return "IF";
    case K::GetSds: return "GETSDS";
    case K::SetSds: return "SETSDS";
    case K::ReadA: return "READA";
    case K::WriteA: return "WRITEA";
    case K::ReadD: return "READD";
    case K::WriteD: return "WRITED";
    case K::DhtTemp: return "TEMPERATURE";
    case K::DhtHum: return "HUMIDITY";
    case K::LmDot: return "LMDOT";
    case K::LmIntensity: return "LMINTENSITY";
    case K::LmClear: return "LMCLEAR";
    case K::LmDisplay: return "LMDISPLAY";
    }
    return "?";
}

const char* cont_name(StepCont::Kind k)
{
    switch (k) {
    case StepCont::Kind::IfValue: return "IfValue";
    case StepCont::Kind::IfStable: return "IfStable";
    case StepCont::Kind::IfUnstable: return "IfUnstable";
    case StepCont::Kind::IfNoValue: return "IfNoValue";
    case StepCont::Kind::Always: return "Always";
    }
    return "?";
}

bool uses_sds(K k) { return k == K::GetSds || k == K::SetSds; }
bool uses_pin(K k) { return k == K::ReadA || k == K::WriteA || k == K::ReadD || k == K::WriteD; }
bool uses_periph(K k) { return k >= K::DhtTemp && k <= K::LmDisplay; }

} // namespace

const char* op_name(Op op)
{
    switch (op) {
    case Op::PushLit: return "PUSHLIT";
    case Op::PushArg: return "PUSHARG";
    case Op::Add: return "ADD";
    case Op::Sub: return "SUB";
    case Op::Mul: return "MUL";
    case Op::Div: return "DIV";
    case Op::Eq: return "EQ";
    case Op::Ne: return "NEQ";
    case Op::Lt: return "LT";
    case Op::Gt: return "GT";
    case Op::Le: return "LE";
    case Op::Ge: return "GE";
    case Op::And: return "AND";
    case Op::Or: return "OR";
    case Op::Not: return "NOT";
    case Op::Jmp: return "JMP";
    case Op::JmpIfFalse: return "JMPIFFALSE";
    case Op::MkPair: return "MKPAIR";
    case Op::Fst: return "FST";
    case Op::Snd: return "SND";
    case Op::Task: return "TASK";
    case Op::Call: return "CALL";
    case Op::TailCall: return "TAILCALL";
    case Op::Return: return "RETURN";
    }
    return "?";
}

const SdsEntry* BytecodeImage::find_sds(std::uint8_t id) const
{
    for (const auto& s : sds)
        if (s.id == id) return &s;
    return nullptr;
}

const PeriphEntry* BytecodeImage::find_periph(std::uint8_t id) const
{
    for (const auto& p : periphs)
        if (p.id == id) return &p;
    return nullptr;
}

Instr decode_instr(const Segment& seg, std::size_t pc)
{
    if (pc >= seg.code.size()) throw MalformedImage("pc outside segment");
    const std::uint8_t* start = seg.code.data() + pc;
    In in(start, seg.code.data() + seg.code.size());
    Instr ins;
    std::uint8_t b = in.u8();
    if (!valid_op(b)) throw MalformedImage("bad opcode");
    ins.op = static_cast<Op>(b);
    std::size_t len = 1;
    auto take = [&](auto v) {
        len += sizeof(v);
        return v;
    };
    switch (ins.op) {
    case Op::PushLit: {
        const std::uint8_t* p = start + 1;
        try {
            ins.lit = get_value(p, seg.code.data() + seg.code.size(), ValueLayout::Image);
        } catch (const FormatError& e) {
            throw MalformedImage(std::string("literal: ") + e.what());
        }
        len = static_cast<std::size_t>(p - start);
        break;
    }
    case Op::PushArg: ins.a = take(in.u8()); break;
    case Op::Jmp:
    case Op::JmpIfFalse: ins.target = take(in.u16()); break;
    case Op::Call:
    case Op::TailCall:
        ins.a = take(in.u8());
        ins.b = take(in.u8());
        break;
    case Op::Task: {
        std::uint8_t k = take(in.u8());
        if (k > static_cast<std::uint8_t>(K::LmDisplay) || k == static_cast<std::uint8_t>(K::Call) ||
            k == static_cast<std::uint8_t>(K::If))
            throw MalformedImage("bad task kind");
        ins.task = static_cast<K>(k);
        if (uses_sds(ins.task) || uses_periph(ins.task))
            ins.a = take(in.u8());
        else if (uses_pin(ins.task)) {
            ins.pin = in.pin();
            len += 2;
        } else if (ins.task == K::Step || ins.task == K::Rpeat)
            ins.target = take(in.u16());
        break;
    }
    default: break;
    }
    ins.size = len;
    return ins;
}

std::vector<std::uint8_t> encode(const BytecodeImage& img)
{
    std::vector<std::uint8_t> out;
    out.push_back(img.version);
    out.push_back(img.main_frame);
    put16(out, img.entry);
    out.push_back(static_cast<std::uint8_t>(img.funs.size()));
    for (const auto& f : img.funs) {
        put16(out, f.segment);
        out.push_back(f.arity);
        out.push_back(f.frame_size);
        out.push_back(f.is_task ? 1 : 0);
    }
    out.push_back(static_cast<std::uint8_t>(img.sds.size()));
    for (const auto& s : img.sds) {
        out.push_back(s.id);
        put_type(out, s.type);
        put_value(out, s.initial, ValueLayout::Image);
        out.push_back(s.lifted ? 1 : 0);
        if (s.key.size() > 0xFF) throw CapacityExceeded("SDS key longer than 255 bytes");
        out.push_back(static_cast<std::uint8_t>(s.key.size()));
        out.insert(out.end(), s.key.begin(), s.key.end());
    }
    out.push_back(static_cast<std::uint8_t>(img.periphs.size()));
    for (const auto& p : img.periphs) {
        out.push_back(p.id);
        out.push_back(static_cast<std::uint8_t>(p.kind));
        out.push_back(static_cast<std::uint8_t>(p.pin_a.bank));
        out.push_back(p.pin_a.index);
        out.push_back(static_cast<std::uint8_t>(p.pin_b.bank));
        out.push_back(p.pin_b.index);
        out.push_back(static_cast<std::uint8_t>(p.variant));
    }
    put16(out, static_cast<std::uint16_t>(img.conts.size()));
    for (const auto& table : img.conts) {
        out.push_back(static_cast<std::uint8_t>(table.size()));
        for (const auto& c : table) {
            out.push_back(static_cast<std::uint8_t>(c.kind));
            out.push_back(c.binder);
            put16(out, c.pred);
            put16(out, c.body);
        }
    }
    put16(out, static_cast<std::uint16_t>(img.segments.size()));
    for (const auto& s : img.segments) {
        put16(out, static_cast<std::uint16_t>(s.code.size()));
        out.insert(out.end(), s.code.begin(), s.code.end());
    }
    return out;
}

namespace {

void check_segment(const BytecodeImage& img, std::size_t si)
{
    const Segment& seg = img.segments[si];
    std::vector<bool> starts(seg.code.size() + 1, false);
    std::vector<std::uint16_t> jumps;
    std::size_t pc = 0;
    while (pc < seg.code.size()) {
        starts[pc] = true;
        Instr ins = decode_instr(seg, pc);
        switch (ins.op) {
        case Op::Jmp:
        case Op::JmpIfFalse: jumps.push_back(ins.target); break;
        case Op::Call:
        case Op::TailCall:
            if (ins.a >= img.funs.size()) throw MalformedImage("dangling function reference");
            if (img.funs[ins.a].arity != ins.b) throw MalformedImage("call arity mismatch");
            break;
        case Op::Task:
            if (uses_sds(ins.task) && !img.find_sds(ins.a)) throw MalformedImage("dangling SDS reference");
            if (uses_periph(ins.task)) {
                const PeriphEntry* p = img.find_periph(ins.a);
                if (!p) throw MalformedImage("dangling peripheral reference");
                bool dht = ins.task == K::DhtTemp || ins.task == K::DhtHum;
                if (dht != (p->kind == PeriphDecl::Kind::Dht)) throw MalformedImage("peripheral kind mismatch");
            }
            if (ins.task == K::Step && ins.target >= img.conts.size()) throw MalformedImage("dangling continuation table");
            if (ins.task == K::Rpeat && ins.target >= img.segments.size()) throw MalformedImage("dangling segment reference");
            break;
        default: break;
        }
        pc += ins.size;
    }
    starts[seg.code.size()] = true;
    for (auto t : jumps)
        if (t > seg.code.size() || !starts[t]) throw MalformedImage("jump target outside segment");
}

} // namespace

BytecodeImage decode(const std::vector<std::uint8_t>& bytes)
{
    In in(bytes.data(), bytes.data() + bytes.size());
    BytecodeImage img;
    if (bytes.empty()) throw MalformedImage("truncated");
    img.version = in.u8();
    if (img.version != kImageVersion) throw MalformedImage("version");
    img.main_frame = in.u8();
    img.entry = in.u16();
    std::uint8_t n = in.u8();
    for (int i = 0; i < n; ++i) {
        FunEntry f;
        f.segment = in.u16();
        f.arity = in.u8();
        f.frame_size = in.u8();
        std::uint8_t t = in.u8();
        if (t > 1) throw MalformedImage("bad function flag");
        f.is_task = t == 1;
        if (f.arity > f.frame_size) throw MalformedImage("frame smaller than arity");
        img.funs.push_back(f);
    }
    n = in.u8();
    for (int i = 0; i < n; ++i) {
        SdsEntry s;
        s.id = in.u8();
        if (img.find_sds(s.id)) throw MalformedImage("duplicate SDS id");
        s.type = in.type();
        s.initial = in.value();
        if (!s.initial.has_type(s.type)) throw MalformedImage("SDS initial value does not match its type");
        std::uint8_t l = in.u8();
        if (l > 1) throw MalformedImage("bad lifted flag");
        s.lifted = l == 1;
        auto key = in.bytes(in.u8());
        s.key.assign(key.begin(), key.end());
        img.sds.push_back(std::move(s));
    }
    n = in.u8();
    for (int i = 0; i < n; ++i) {
        PeriphEntry p;
        p.id = in.u8();
        if (img.find_periph(p.id)) throw MalformedImage("duplicate peripheral id");
        std::uint8_t k = in.u8();
        if (k > 1) throw MalformedImage("bad peripheral kind");
        p.kind = static_cast<PeriphDecl::Kind>(k);
        p.pin_a = in.pin();
        p.pin_b = in.pin();
        std::uint8_t v = in.u8();
        if (v > 2) throw MalformedImage("bad DHT variant");
        p.variant = static_cast<DhtVariant>(v);
        img.periphs.push_back(p);
    }
    std::uint16_t ntables = in.u16();
    for (int i = 0; i < ntables; ++i) {
        std::vector<ContEntry> table(in.u8());
        for (auto& c : table) {
            std::uint8_t k = in.u8();
            if (k > static_cast<std::uint8_t>(StepCont::Kind::Always)) throw MalformedImage("bad continuation kind");
            c.kind = static_cast<StepCont::Kind>(k);
            c.binder = in.u8();
            c.pred = in.u16();
            c.body = in.u16();
        }
        img.conts.push_back(std::move(table));
    }
    std::uint16_t nseg = in.u16();
    for (int i = 0; i < nseg; ++i) {
        Segment s;
        s.code = in.bytes(in.u16());
        img.segments.push_back(std::move(s));
    }
    if (!in.done()) throw MalformedImage("trailing bytes");

    if (img.entry >= img.segments.size()) throw MalformedImage("dangling entry segment");
    for (const auto& f : img.funs)
        if (f.segment >= img.segments.size()) throw MalformedImage("dangling function segment");
    for (const auto& table : img.conts) {
        if (table.empty()) throw MalformedImage("empty continuation table");
        for (const auto& c : table) {
            if (c.body >= img.segments.size()) throw MalformedImage("dangling continuation body");
            if (c.pred != kNoSegment && c.pred >= img.segments.size()) throw MalformedImage("dangling continuation predicate");
        }
    }
    for (std::size_t i = 0; i < img.segments.size(); ++i) check_segment(img, i);
    return img;
}

std::string disassemble(const BytecodeImage& img)
{
    std::ostringstream os;
    os << "; image v" << int(img.version) << ", entry s" << img.entry << ", main frame " << int(img.main_frame) << "\n";
    os << "; " << img.funs.size() << " functions, " << img.sds.size() << " sds, " << img.periphs.size()
       << " peripherals, " << img.conts.size() << " continuation tables, " << img.segments.size() << " segments\n";
    for (std::size_t i = 0; i < img.funs.size(); ++i) {
        const FunEntry& f = img.funs[i];
        os << "; f" << i << " = s" << f.segment << " arity " << int(f.arity) << " frame " << int(f.frame_size)
           << (f.is_task ? " task" : " expr") << "\n";
    }
    for (const auto& s : img.sds) {
        os << "; s" << int(s.id) << " : " << s.type.to_string();
        if (s.lifted)
            os << " lifted \"" << s.key << "\"";
        else
            os << " = " << s.initial.to_string();
        os << "\n";
    }
    for (const auto& p : img.periphs) {
        os << "; p" << int(p.id) << (p.kind == PeriphDecl::Kind::Dht ? " DHT " : " LEDMATRIX ") << p.pin_a.name();
        if (p.kind == PeriphDecl::Kind::LedMatrix) os << " " << p.pin_b.name();
        os << "\n";
    }
    for (std::size_t i = 0; i < img.conts.size(); ++i) {
        os << "; c" << i << ":";
        for (const auto& c : img.conts[i]) {
            os << " " << cont_name(c.kind);
            if (c.binder != kNoSlot) os << " a" << int(c.binder);
            if (c.pred != kNoSegment) os << " pred s" << c.pred;
            os << " body s" << c.body << ";";
        }
        os << "\n";
    }
    for (std::size_t si = 0; si < img.segments.size(); ++si) {
        const Segment& seg = img.segments[si];
        os << "s" << si << ":";
        if (si == img.entry) os << " main";
        for (std::size_t f = 0; f < img.funs.size(); ++f)
            if (img.funs[f].segment == si) os << " f" << f;
        os << "\n";
        std::size_t pc = 0;
        while (pc < seg.code.size()) {
            Instr ins = decode_instr(seg, pc);
            os << op_name(ins.op);
            switch (ins.op) {
            case Op::PushLit: os << " " << ins.lit.to_string(); break;
            case Op::PushArg: os << " " << int(ins.a); break;
            case Op::Jmp:
            case Op::JmpIfFalse: os << " @" << ins.target; break;
            case Op::Call:
            case Op::TailCall: os << " f" << int(ins.a) << " " << int(ins.b); break;
            case Op::Task:
                os << " " << task_mnemonic(ins.task);
                if (uses_sds(ins.task)) os << " s" << int(ins.a);
                if (uses_periph(ins.task)) os << " p" << int(ins.a);
                if (uses_pin(ins.task)) os << " " << ins.pin.name();
                if (ins.task == K::Step) os << " c" << ins.target;
                if (ins.task == K::Rpeat) os << " s" << ins.target;
                break;
            default: break;
            }
            os << "\n";
            pc += ins.size;
        }
    }
    return os.str();
}

} // namespace mtask
