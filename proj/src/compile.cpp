#include "mtask/bytecode.hpp"
#include "mtask/ops.hpp"

#include <functional>

namespace mtask {

namespace {

using K = TaskExpr::Kind;

class Compiler {
public:
    explicit Compiler(const Program& p) : p_(p) {}

    BytecodeImage run()
    {
        for (const auto& d : p_.sds)
            img_.sds.push_back({d.id, d.type, round_real(d.initial, RealWidth::F32), d.lifted, d.key});
        for (const auto& d : p_.periphs) img_.periphs.push_back({d.id, d.kind, d.pin_a, d.pin_b, d.variant});

        // function i lives in segment i
        img_.segments.resize(p_.funs.size());
        for (std::size_t i = 0; i < p_.funs.size(); ++i) {
            const FunDef& f = p_.funs[i];
            img_.funs.push_back({static_cast<std::uint16_t>(i), static_cast<std::uint8_t>(f.params.size()), f.frame_size, f.is_task});
        }
        for (std::size_t i = 0; i < p_.funs.size(); ++i) {
            const FunDef& f = p_.funs[i];
            std::vector<std::uint8_t> code;
            if (f.is_task)
                task(code, *f.task_body);
            else
                expr(code, *f.expr_body);
            code.push_back(static_cast<std::uint8_t>(Op::Return));
            store(i, std::move(code));
        }
        img_.entry = segment([&](std::vector<std::uint8_t>& code) { task(code, *p_.main); });
        img_.main_frame = p_.main_frame_size;
        return std::move(img_);
    }

private:
    void store(std::size_t idx, std::vector<std::uint8_t> code)
    {
        if (code.size() > 0xFFFF) throw CapacityExceeded("segment longer than 65535 bytes");
        img_.segments[idx].code = std::move(code);
    }

    std::uint16_t segment(const std::function<void(std::vector<std::uint8_t>&)>& body)
    {
        if (img_.segments.size() >= kNoSegment) throw CapacityExceeded("too many segments");
        std::size_t idx = img_.segments.size();
        img_.segments.emplace_back();
        std::vector<std::uint8_t> code;
        body(code);
        store(idx, std::move(code));
        return static_cast<std::uint16_t>(idx);
    }

    static void op(std::vector<std::uint8_t>& c, Op o) { c.push_back(static_cast<std::uint8_t>(o)); }

    static void u16(std::vector<std::uint8_t>& c, std::size_t v)
    {
        if (v > 0xFFFF) throw CapacityExceeded("offset does not fit in 16 bits");
        c.push_back(static_cast<std::uint8_t>(v));
        c.push_back(static_cast<std::uint8_t>(v >> 8));
    }

    static std::size_t jump(std::vector<std::uint8_t>& c, Op o)
    {
        op(c, o);
        std::size_t at = c.size();
        c.push_back(0);
        c.push_back(0);
        return at;
    }

    static void patch(std::vector<std::uint8_t>& c, std::size_t at)
    {
        std::size_t target = c.size();
        if (target > 0xFFFF) throw CapacityExceeded("jump offset does not fit in 16 bits");
        c[at] = static_cast<std::uint8_t>(target);
        c[at + 1] = static_cast<std::uint8_t>(target >> 8);
    }

    static void call(std::vector<std::uint8_t>& c, bool tail, std::uint8_t fun, std::size_t argc)
    {
        op(c, tail ? Op::TailCall : Op::Call);
        c.push_back(fun);
        c.push_back(static_cast<std::uint8_t>(argc));
    }

    void expr(std::vector<std::uint8_t>& c, const Expr& e)
    {
        switch (e.kind) {
        case Expr::Kind::Lit:
            op(c, Op::PushLit);
            put_value(c, round_real(e.lit, RealWidth::F32), ValueLayout::Image);
            return;
        case Expr::Kind::Arith:
            expr(c, *e.kids[0]);
            expr(c, *e.kids[1]);
            op(c, static_cast<Op>(static_cast<std::uint8_t>(Op::Add) + static_cast<std::uint8_t>(e.arith)));
            return;
        case Expr::Kind::Cmp:
            expr(c, *e.kids[0]);
            expr(c, *e.kids[1]);
            op(c, static_cast<Op>(static_cast<std::uint8_t>(Op::Eq) + static_cast<std::uint8_t>(e.cmp)));
            return;
        case Expr::Kind::Logic:
            expr(c, *e.kids[0]);
            expr(c, *e.kids[1]);
            op(c, e.logic == LogicOp::And ? Op::And : Op::Or);
            return;
        case Expr::Kind::Not:
            expr(c, *e.kids[0]);
            op(c, Op::Not);
            return;
        case Expr::Kind::If: {
            expr(c, *e.kids[0]);
            std::size_t to_else = jump(c, Op::JmpIfFalse);
            expr(c, *e.kids[1]);
            std::size_t to_end = jump(c, Op::Jmp);
            patch(c, to_else);
            expr(c, *e.kids[2]);
            patch(c, to_end);
            return;
        }
        case Expr::Kind::First:
            expr(c, *e.kids[0]);
            op(c, Op::Fst);
            return;
        case Expr::Kind::Second:
            expr(c, *e.kids[0]);
            op(c, Op::Snd);
            return;
        case Expr::Kind::MkPair:
            expr(c, *e.kids[0]);
            expr(c, *e.kids[1]);
            op(c, Op::MkPair);
            return;
        case Expr::Kind::Arg:
            op(c, Op::PushArg);
            c.push_back(e.slot);
            return;
        case Expr::Kind::Call:
            for (auto& k : e.kids) expr(c, *k);
            call(c, e.tail, e.fun, e.kids.size());
            return;
        }
    }

    void task(std::vector<std::uint8_t>& c, const TaskExpr& t)
    {
        switch (t.kind) {
        case K::Call:
            for (auto& a : t.args) expr(c, *a);
            call(c, t.tail, t.ref, t.args.size());
            return;
        case K::If: {
            expr(c, *t.args[0]);
            std::size_t to_else = jump(c, Op::JmpIfFalse);
            task(c, *t.kids[0]);
            std::size_t to_end = jump(c, Op::Jmp);
            patch(c, to_else);
            task(c, *t.kids[1]);
            patch(c, to_end);
            return;
        }
        case K::And:
        case K::Or:
            task(c, *t.kids[0]);
            task(c, *t.kids[1]);
            op(c, Op::Task);
            c.push_back(static_cast<std::uint8_t>(t.kind));
            return;
        case K::Step: {
            task(c, *t.kids[0]);
            std::vector<ContEntry> table;
            for (const auto& sc : t.conts) {
                ContEntry ce;
                ce.kind = sc.kind;
                ce.binder = sc.binder == kNoBinder ? kNoSlot : static_cast<std::uint8_t>(sc.binder);
                bool trivial = sc.pred && sc.pred->kind == Expr::Kind::Lit && sc.pred->lit.kind() == TypeKind::Bool &&
                               sc.pred->lit.as_bool();
                if (sc.pred && !trivial) ce.pred = segment([&](std::vector<std::uint8_t>& code) { expr(code, *sc.pred); });
                ce.body = segment([&](std::vector<std::uint8_t>& code) { task(code, *sc.body); });
                table.push_back(ce);
            }
            if (img_.conts.size() >= 0xFFFF) throw CapacityExceeded("too many continuation tables");
            img_.conts.push_back(std::move(table));
            op(c, Op::Task);
            c.push_back(static_cast<std::uint8_t>(K::Step));
            u16(c, img_.conts.size() - 1);
            return;
        }
        case K::Rpeat: {
            std::uint16_t seg = segment([&](std::vector<std::uint8_t>& code) { task(code, *t.kids[0]); });
            op(c, Op::Task);
            c.push_back(static_cast<std::uint8_t>(K::Rpeat));
            u16(c, seg);
            return;
        }
        default:
            break;
        }
        for (auto& a : t.args) expr(c, *a);
        op(c, Op::Task);
        c.push_back(static_cast<std::uint8_t>(t.kind));
        switch (t.kind) {
        case K::GetSds:
        case K::SetSds:
        case K::DhtTemp:
        case K::DhtHum:
        case K::LmDot:
        case K::LmIntensity:
        case K::LmClear:
        case K::LmDisplay:
            c.push_back(t.ref);
            break;
        case K::ReadA:
        case K::WriteA:
        case K::ReadD:
        case K::WriteD:
            c.push_back(static_cast<std::uint8_t>(t.pin.bank));
            c.push_back(t.pin.index);
            break;
        default:
            break;
        }
    }

    const Program& p_;
    BytecodeImage img_;
};

} // namespace

BytecodeImage compile(const Program& p)
{
    if (!p.validated) throw std::invalid_argument("compile requires a validated program");
    if (p.funs.size() > 0xFF || p.sds.size() > 0xFF || p.periphs.size() > 0xFF)
        throw CapacityExceeded("more than 255 functions, SDSs or peripherals");
    return Compiler(p).run();
}

} // namespace mtask
