#include "mtask/lang.hpp"
#include "mtask/ops.hpp"

#include <map>

namespace mtask {

namespace {

class Printer {
public:
    explicit Printer(const Program& p) : p_(p) {}

    std::string program()
    {
        std::string out;
        for (const auto& d : p_.sds) {
            if (d.lifted)
                out += "liftsds s" + std::to_string(d.id) + " = \"" + d.key + "\" in ";
            else
                out += "sds s" + std::to_string(d.id) + " = " + d.initial.to_string() + " in ";
        }
        for (const auto& d : p_.periphs) {
            std::string name = "p" + std::to_string(d.id);
            if (d.kind == PeriphDecl::Kind::Dht) {
                static const char* variants[] = {"DHT11", "DHT21", "DHT22"};
                out += "DHT " + name + " = DHT(" + d.pin_a.name() + ", " + variants[static_cast<int>(d.variant)] + ") in ";
            } else {
                out += "ledmatrix " + name + " = ledmatrix(" + d.pin_a.name() + ", " + d.pin_b.name() + ") in ";
            }
        }
        for (std::size_t i = 0; i < p_.funs.size(); ++i) {
            const FunDef& f = p_.funs[i];
            names_.clear();
            std::vector<std::string> ps;
            for (std::size_t k = 0; k < f.params.size(); ++k) ps.push_back(name(static_cast<int>(k)));
            out += "let f" + std::to_string(i) + " " + tuple(ps, true) + " = ";
            out += f.is_task ? task(*f.task_body) : expr(*f.expr_body);
            out += " in ";
        }
        names_.clear();
        out += "(" + task(*p_.main) + ")";
        return out;
    }

private:
    std::string name(int slot)
    {
        auto it = names_.find(slot);
        if (it != names_.end()) return it->second;
        return names_[slot] = "a" + std::to_string(++counter_);
    }

    // f x  /  f (x, y)  /  f ()
    static std::string tuple(const std::vector<std::string>& items, bool atomic_single)
    {
        if (items.size() == 1 && atomic_single) return items[0];
        std::string s = "(";
        for (std::size_t i = 0; i < items.size(); ++i) s += (i ? ", " : "") + items[i];
        return s + ")";
    }

    static bool atomic(const Expr& e)
    {
        switch (e.kind) {
        case Expr::Kind::Lit:
            if (e.lit.kind() == TypeKind::Int) return e.lit.as_int() >= 0;
            if (e.lit.kind() == TypeKind::Real) return e.lit.as_real() >= 0;
            return true;
        case Expr::Kind::Arg:
        case Expr::Kind::MkPair:
            return true;
        default:
            return false;
        }
    }

    std::string operand(const Expr& e)
    {
        std::string s = expr(e);
        return atomic(e) ? s : "(" + s + ")";
    }

    std::string call(int fun, const std::vector<ExprPtr>& args)
    {
        std::string f = "f" + std::to_string(fun);
        if (args.empty()) return f + " ()";
        if (args.size() == 1) return f + " " + operand(*args[0]);
        std::vector<std::string> as;
        for (auto& a : args) as.push_back(expr(*a));
        return f + " " + tuple(as, false);
    }

    std::string expr(const Expr& e)
    {
        switch (e.kind) {
        case Expr::Kind::Lit: return e.lit.to_string();
        case Expr::Kind::Arith: return operand(*e.kids[0]) + " " + to_symbol(e.arith) + " " + operand(*e.kids[1]);
        case Expr::Kind::Cmp: return operand(*e.kids[0]) + " " + to_symbol(e.cmp) + " " + operand(*e.kids[1]);
        case Expr::Kind::Logic:
            return operand(*e.kids[0]) + (e.logic == LogicOp::And ? " && " : " || ") + operand(*e.kids[1]);
        case Expr::Kind::Not: return "Not " + operand(*e.kids[0]);
        case Expr::Kind::If: return "If " + operand(*e.kids[0]) + " " + operand(*e.kids[1]) + " " + operand(*e.kids[2]);
        case Expr::Kind::First: return "first " + operand(*e.kids[0]);
        case Expr::Kind::Second: return "second " + operand(*e.kids[0]);
        case Expr::Kind::MkPair: return "(" + expr(*e.kids[0]) + ", " + expr(*e.kids[1]) + ")";
        case Expr::Kind::Arg: return name(e.slot);
        case Expr::Kind::Call: return call(e.fun, e.kids);
        }
        return "?";
    }

    std::string basic(const TaskExpr& t, const std::string& subject)
    {
        std::string k = kind_name(t.kind);
        if (t.args.empty()) return k + " " + subject;
        std::string s = k + "(" + subject;
        for (auto& a : t.args) s += ", " + expr(*a);
        return s + ")";
    }

    static bool trivially_true(const ExprPtr& e)
    {
        return e && e->kind == Expr::Kind::Lit && e->lit.kind() == TypeKind::Bool && e->lit.as_bool();
    }

    std::string lambda(int binder)
    {
        return binder == kNoBinder ? "\\_." : "\\" + name(binder) + ".";
    }

    std::string cont(const StepCont& c)
    {
        switch (c.kind) {
        case StepCont::Kind::IfValue:
        case StepCont::Kind::IfStable:
        case StepCont::Kind::IfUnstable: {
            const char* k = c.kind == StepCont::Kind::IfValue ? "IfValue" : (c.kind == StepCont::Kind::IfStable ? "IfStable" : "IfUnstable");
            std::string lam = lambda(c.binder);
            return std::string(k) + " " + lam + "(" + expr(*c.pred) + ") " + lam + "(" + task(*c.body) + ")";
        }
        case StepCont::Kind::IfNoValue: return "IfNoValue (" + task(*c.body) + ")";
        case StepCont::Kind::Always: return "Always (" + task(*c.body) + ")";
        }
        return "?";
    }

    std::string step(const TaskExpr& t)
    {
        std::string left = task(*t.kids[0]);
        if (t.conts.size() == 1 && trivially_true(t.conts[0].pred)) {
            const StepCont& c = t.conts[0];
            bool stable = c.kind == StepCont::Kind::IfStable;
            bool any = c.kind == StepCont::Kind::IfValue;
            if (stable || any) {
                if (c.binder != kNoBinder) {
                    std::string lam = lambda(c.binder);
                    return left + (stable ? " >>= " : " >>~ ") + lam + "(" + task(*c.body) + ")";
                }
                return left + (stable ? " >>| (" : " >>. (") + task(*c.body) + ")";
            }
        }
        std::string s = left + " >>* [";
        for (std::size_t i = 0; i < t.conts.size(); ++i) s += (i ? ", " : "") + cont(t.conts[i]);
        return s + "]";
    }

    std::string task(const TaskExpr& t)
    {
        using K = TaskExpr::Kind;
        switch (t.kind) {
        case K::Rtrn:
            if (t.implicit) return expr(*t.args[0]);
            return "rtrn " + operand(*t.args[0]);
        case K::Rpeat: return "rpeat (" + task(*t.kids[0]) + ")";
        case K::Delay: return "delay " + operand(*t.args[0]);
        case K::And: return "(" + task(*t.kids[0]) + ") .&&. (" + task(*t.kids[1]) + ")";
        case K::Or: return "(" + task(*t.kids[0]) + ") .||. (" + task(*t.kids[1]) + ")";
        case K::Step: return step(t);
        case K::Call: return call(t.ref, t.args);
        case K::If: return "If " + operand(*t.args[0]) + " (" + task(*t.kids[0]) + ") (" + task(*t.kids[1]) + ")";
        case K::GetSds:
        case K::SetSds: return basic(t, "s" + std::to_string(t.ref));
        case K::ReadA:
        case K::WriteA:
        case K::ReadD:
        case K::WriteD: return basic(t, t.pin.name());
        case K::DhtTemp:
        case K::DhtHum:
        case K::LmDot:
        case K::LmIntensity:
        case K::LmClear:
        case K::LmDisplay: return basic(t, "p" + std::to_string(t.ref));
        }
        return "?";
    }

    const Program& p_;
    std::map<int, std::string> names_;
    int counter_ = 0;
};

} // namespace

std::vector<std::string> pretty_print(const Program& p)
{
    return {Printer(p).program()};
}

} // namespace mtask
