#include "mtask/lang.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <set>

namespace mtask {

const char* kind_name(TaskExpr::Kind k)
{
    switch (k) {
    case TaskExpr::Kind::Rtrn: return "rtrn";
    case TaskExpr::Kind::Rpeat: return "rpeat";
    case TaskExpr::Kind::Delay: return "delay";
    case TaskExpr::Kind::And: return ".&&.";
    case TaskExpr::Kind::Or: return ".||.";
    case TaskExpr::Kind::Step: return ">>*.";
    case TaskExpr::Kind::Call: return "call";
    case TaskExpr::Kind::If: return "If";
    case TaskExpr::Kind::GetSds: return "getSds";
    case TaskExpr::Kind::SetSds: return "setSds";
    case TaskExpr::Kind::ReadA: return "readA";
    case TaskExpr::Kind::WriteA: return "writeA";
    case TaskExpr::Kind::ReadD: return "readD";
    case TaskExpr::Kind::WriteD: return "writeD";
    case TaskExpr::Kind::DhtTemp: return "temperature";
    case TaskExpr::Kind::DhtHum: return "humidity";
    case TaskExpr::Kind::LmDot: return "LMDot";
    case TaskExpr::Kind::LmIntensity: return "LMIntensity";
    case TaskExpr::Kind::LmClear: return "LMClear";
    case TaskExpr::Kind::LmDisplay: return "LMDisplay";
    }
    return "?";
}

const SdsDecl* Program::find_sds(std::uint8_t id) const
{
    for (const auto& s : sds)
        if (s.id == id) return &s;
    return nullptr;
}

const PeriphDecl* Program::find_periph(std::uint8_t id) const
{
    for (const auto& p : periphs)
        if (p.id == id) return &p;
    return nullptr;
}

std::string ValidationReport::to_string() const
{
    std::string s;
    for (const auto& d : diagnostics) s += d.path + ": " + d.reason + "\n";
    return s;
}

ExprPtr clone(const ExprPtr& e)
{
    if (!e) return nullptr;
    auto c = std::make_shared<Expr>(*e);
    for (auto& k : c->kids) k = clone(k);
    return c;
}

TaskPtr clone(const TaskPtr& t)
{
    if (!t) return nullptr;
    auto c = std::make_shared<TaskExpr>(*t);
    for (auto& a : c->args) a = clone(a);
    for (auto& k : c->kids) k = clone(k);
    for (auto& sc : c->conts) {
        sc.pred = clone(sc.pred);
        sc.body = clone(sc.body);
    }
    return c;
}

namespace {

constexpr std::uint8_t kMaxPinIndex = 63;

bool numeric(const Type& t) { return t.kind() == TypeKind::Int || t.kind() == TypeKind::Real; }

class Checker {
public:
    explicit Checker(Program& p) : p_(p) {}

    ValidationReport run()
    {
        check_decls();
        for (std::size_t i = 0; i < p_.funs.size(); ++i) check_fun(static_cast<int>(i));
        check_main();
        if (report_.ok()) {
            check_unguarded();
            mark_tails();
        }
        p_.validated = report_.ok();
        return report_;
    }

private:
    struct Frame {
        std::vector<std::optional<Type>> slots;
        std::string owner;
    };

    void diag(const std::string& path, const std::string& reason) { report_.diagnostics.push_back({path, reason}); }

    void check_decls()
    {
        std::set<int> ids;
        for (auto& s : p_.sds) {
            std::string path = "sds s" + std::to_string(s.id);
            if (!ids.insert(s.id).second) diag(path, "duplicate sds id");
            if (!s.initial.has_type(s.type)) diag(path, "type mismatch: initial value " + s.initial.to_string() + " is not " + s.type.to_string());
            if (s.lifted && s.key.empty()) diag(path, "lifted sds without binding key");
        }
        ids.clear();
        for (auto& d : p_.periphs) {
            std::string path = "peripheral p" + std::to_string(d.id);
            if (!ids.insert(d.id).second) diag(path, "duplicate peripheral id");
            if (d.pin_a.index > kMaxPinIndex || d.pin_b.index > kMaxPinIndex) diag(path, "pin out of range");
        }
    }

    void check_fun(int i)
    {
        FunDef& f = p_.funs[i];
        std::string path = "fun f" + std::to_string(i);
        if (f.params.size() > f.frame_size) {
            diag(path, "frame smaller than parameter list");
            return;
        }
        Frame fr;
        fr.owner = path;
        fr.slots.assign(f.frame_size, std::nullopt);
        for (std::size_t k = 0; k < f.params.size(); ++k) fr.slots[k] = f.params[k];
        if (f.is_task) {
            if (!f.task_body) {
                diag(path, "missing body");
                return;
            }
            f.task_body = clone(f.task_body);
            auto t = task(*f.task_body, fr, path + "/body");
            if (t && !(*t == f.result)) diag(path + "/body", "type mismatch: body is " + t->to_string() + ", declared " + f.result.to_string());
        } else {
            if (!f.expr_body) {
                diag(path, "missing body");
                return;
            }
            f.expr_body = clone(f.expr_body);
            auto t = expr(*f.expr_body, fr, path + "/body");
            if (t && !(*t == f.result)) diag(path + "/body", "type mismatch: body is " + t->to_string() + ", declared " + f.result.to_string());
        }
        f.slot_types.clear();
        for (auto& s : fr.slots) f.slot_types.push_back(s.value_or(Type::unit()));
    }

    void check_main()
    {
        if (!p_.main) {
            diag("main", "missing main");
            return;
        }
        Frame fr;
        fr.owner = "main";
        fr.slots.assign(p_.main_frame_size, std::nullopt);
        p_.main = clone(p_.main);
        task(*p_.main, fr, "main");
        p_.main_slot_types.clear();
        for (auto& s : fr.slots) p_.main_slot_types.push_back(s.value_or(Type::unit()));
    }

    std::optional<Type> expr(Expr& e, Frame& fr, const std::string& path)
    {
        std::vector<std::optional<Type>> kt;
        for (std::size_t i = 0; i < e.kids.size(); ++i) {
            if (!e.kids[i]) {
                diag(path, "missing operand");
                return std::nullopt;
            }
            kt.push_back(expr(*e.kids[i], fr, path + "/" + std::to_string(i)));
        }
        for (auto& t : kt)
            if (!t) return std::nullopt;
        auto arity = [&](std::size_t n) {
            if (e.kids.size() != n) {
                diag(path, "arity mismatch");
                return false;
            }
            return true;
        };
        std::optional<Type> r;
        switch (e.kind) {
        case Expr::Kind::Lit:
            r = e.lit.type();
            break;
        case Expr::Kind::Arith:
            if (!arity(2)) return std::nullopt;
            if (!(*kt[0] == *kt[1]) || !numeric(*kt[0])) {
                diag(path, "type mismatch: arithmetic on " + kt[0]->to_string() + " and " + kt[1]->to_string());
                return std::nullopt;
            }
            r = kt[0];
            break;
        case Expr::Kind::Cmp:
            if (!arity(2)) return std::nullopt;
            if (!(*kt[0] == *kt[1])) {
                diag(path, "type mismatch: comparing " + kt[0]->to_string() + " with " + kt[1]->to_string());
                return std::nullopt;
            }
            if (e.cmp != CmpOp::Eq && e.cmp != CmpOp::Ne && !numeric(*kt[0])) {
                diag(path, "type mismatch: ordering on " + kt[0]->to_string());
                return std::nullopt;
            }
            r = Type::boolean();
            break;
        case Expr::Kind::Logic:
            if (!arity(2)) return std::nullopt;
            if (kt[0]->kind() != TypeKind::Bool || kt[1]->kind() != TypeKind::Bool) {
                diag(path, "type mismatch: logic on non-Bool");
                return std::nullopt;
            }
            r = Type::boolean();
            break;
        case Expr::Kind::Not:
            if (!arity(1)) return std::nullopt;
            if (kt[0]->kind() != TypeKind::Bool) {
                diag(path, "type mismatch: Not on " + kt[0]->to_string());
                return std::nullopt;
            }
            r = Type::boolean();
            break;
        case Expr::Kind::If:
            if (!arity(3)) return std::nullopt;
            if (kt[0]->kind() != TypeKind::Bool) {
                diag(path, "type mismatch: If condition is " + kt[0]->to_string());
                return std::nullopt;
            }
            if (!(*kt[1] == *kt[2])) {
                diag(path, "type mismatch: If branches " + kt[1]->to_string() + " and " + kt[2]->to_string());
                return std::nullopt;
            }
            r = kt[1];
            break;
        case Expr::Kind::First:
        case Expr::Kind::Second:
            if (!arity(1)) return std::nullopt;
            if (!kt[0]->is_pair()) {
                diag(path, "type mismatch: projection of " + kt[0]->to_string());
                return std::nullopt;
            }
            r = e.kind == Expr::Kind::First ? kt[0]->first() : kt[0]->second();
            break;
        case Expr::Kind::MkPair:
            if (!arity(2)) return std::nullopt;
            r = Type::pair(*kt[0], *kt[1]);
            break;
        case Expr::Kind::Arg:
            if (e.slot >= fr.slots.size()) {
                diag(path, "unbound variable a" + std::to_string(e.slot));
                return std::nullopt;
            }
            if (!fr.slots[e.slot]) {
                diag(path, "unbound variable a" + std::to_string(e.slot));
                return std::nullopt;
            }
            r = fr.slots[e.slot];
            break;
        case Expr::Kind::Call: {
            if (e.fun >= p_.funs.size()) {
                diag(path, "unknown function f" + std::to_string(e.fun));
                return std::nullopt;
            }
            const FunDef& f = p_.funs[e.fun];
            if (f.is_task) {
                diag(path, "task function f" + std::to_string(e.fun) + " called in an expression");
                return std::nullopt;
            }
            if (!args_match(f, kt, path)) return std::nullopt;
            r = f.result;
            break;
        }
        }
        e.type = *r;
        return r;
    }

    bool args_match(const FunDef& f, const std::vector<std::optional<Type>>& kt, const std::string& path)
    {
        if (kt.size() != f.params.size()) {
            diag(path, "arity mismatch: " + std::to_string(kt.size()) + " arguments for " + std::to_string(f.params.size()) + " parameters");
            return false;
        }
        for (std::size_t i = 0; i < kt.size(); ++i) {
            if (!(*kt[i] == f.params[i])) {
                diag(path, "type mismatch: argument " + std::to_string(i) + " is " + kt[i]->to_string() + ", expected " + f.params[i].to_string());
                return false;
            }
        }
        return true;
    }

    std::optional<Type> task(TaskExpr& t, Frame& fr, const std::string& path)
    {
        std::vector<std::optional<Type>> at;
        for (std::size_t i = 0; i < t.args.size(); ++i) {
            if (!t.args[i]) {
                diag(path, "missing operand");
                return std::nullopt;
            }
            at.push_back(expr(*t.args[i], fr, path + "/arg" + std::to_string(i)));
        }
        for (auto& a : at)
            if (!a) return std::nullopt;
        for (auto& k : t.kids)
            if (!k) {
                diag(path, "missing subtask");
                return std::nullopt;
            }

        auto want = [&](std::size_t nargs, std::size_t nkids) {
            if (t.args.size() != nargs || t.kids.size() != nkids) {
                diag(path, std::string("arity mismatch for ") + kind_name(t.kind));
                return false;
            }
            return true;
        };
        auto arg_is = [&](std::size_t i, TypeKind k) {
            if (at[i]->kind() != k) {
                diag(path, std::string("type mismatch: ") + kind_name(t.kind) + " operand " + std::to_string(i) + " is " + at[i]->to_string());
                return false;
            }
            return true;
        };
        auto periph = [&](PeriphDecl::Kind k) {
            const PeriphDecl* d = p_.find_periph(t.ref);
            if (!d) {
                diag(path, "unknown peripheral p" + std::to_string(t.ref));
                return false;
            }
            if (d->kind != k) {
                diag(path, "peripheral kind mismatch for p" + std::to_string(t.ref));
                return false;
            }
            return true;
        };
        auto pin_ok = [&](bool need_analog) {
            if (t.pin.index > kMaxPinIndex) {
                diag(path, "pin out of range");
                return false;
            }
            if (need_analog && !t.pin.analog()) {
                diag(path, "type mismatch: analog access to digital pin " + t.pin.name());
                return false;
            }
            return true;
        };

        std::optional<Type> r;
        using K = TaskExpr::Kind;
        switch (t.kind) {
        case K::Rtrn:
            if (!want(1, 0)) return std::nullopt;
            r = at[0];
            break;
        case K::Rpeat:
            if (!want(0, 1)) return std::nullopt;
            if (!task(*t.kids[0], fr, path + "/0")) return std::nullopt;
            r = Type::unit();
            break;
        case K::Delay:
            if (!want(1, 0) || !arg_is(0, TypeKind::Int)) return std::nullopt;
            r = Type::integer();
            break;
        case K::And:
        case K::Or: {
            if (!want(0, 2)) return std::nullopt;
            auto l = task(*t.kids[0], fr, path + "/left");
            auto rr = task(*t.kids[1], fr, path + "/right");
            if (!l || !rr) return std::nullopt;
            if (t.kind == K::And) {
                r = Type::pair(*l, *rr);
            } else {
                if (!(*l == *rr)) {
                    diag(path, "type mismatch: .||. of " + l->to_string() + " and " + rr->to_string());
                    return std::nullopt;
                }
                r = l;
            }
            break;
        }
        case K::Step: {
            if (!want(0, 1)) return std::nullopt;
            auto l = task(*t.kids[0], fr, path + "/0");
            if (!l) return std::nullopt;
            if (t.conts.empty()) {
                diag(path, "step without continuations");
                return std::nullopt;
            }
            for (std::size_t i = 0; i < t.conts.size(); ++i) {
                StepCont& c = t.conts[i];
                std::string cp = path + "/cont" + std::to_string(i);
                if (c.binder != kNoBinder) {
                    if (c.binder < 0 || static_cast<std::size_t>(c.binder) >= fr.slots.size()) {
                        diag(cp, "binder slot outside frame");
                        return std::nullopt;
                    }
                    if (fr.slots[c.binder] && !(*fr.slots[c.binder] == *l)) {
                        diag(cp, "binder slot reused at another type");
                        return std::nullopt;
                    }
                    fr.slots[c.binder] = *l;
                }
                bool guarded = c.kind == StepCont::Kind::IfValue || c.kind == StepCont::Kind::IfStable || c.kind == StepCont::Kind::IfUnstable;
                if (guarded) {
                    if (!c.pred) {
                        diag(cp, "missing predicate");
                        return std::nullopt;
                    }
                    c.pred = clone(c.pred);
                    auto pt = expr(*c.pred, fr, cp + "/pred");
                    if (!pt) return std::nullopt;
                    if (pt->kind() != TypeKind::Bool) {
                        diag(cp + "/pred", "type mismatch: predicate is " + pt->to_string());
                        return std::nullopt;
                    }
                } else if (c.pred || c.binder != kNoBinder) {
                    diag(cp, "unguarded continuation cannot observe the value");
                    return std::nullopt;
                }
                if (!c.body) {
                    diag(cp, "missing body");
                    return std::nullopt;
                }
                c.body = clone(c.body);
                auto bt = task(*c.body, fr, cp + "/body");
                if (!bt) return std::nullopt;
                if (r && !(*r == *bt)) {
                    diag(cp, "type mismatch: continuation yields " + bt->to_string() + ", expected " + r->to_string());
                    return std::nullopt;
                }
                r = bt;
            }
            break;
        }
        case K::Call: {
            if (!t.kids.empty()) {
                diag(path, "arity mismatch for call");
                return std::nullopt;
            }
            if (t.ref >= p_.funs.size()) {
                diag(path, "unknown function f" + std::to_string(t.ref));
                return std::nullopt;
            }
            const FunDef& f = p_.funs[t.ref];
            if (!f.is_task) {
                diag(path, "expression function f" + std::to_string(t.ref) + " used as a task");
                return std::nullopt;
            }
            if (!args_match(f, at, path)) return std::nullopt;
            r = f.result;
            break;
        }
        case K::If: {
            if (!want(1, 2) || !arg_is(0, TypeKind::Bool)) return std::nullopt;
            auto a = task(*t.kids[0], fr, path + "/then");
            auto b = task(*t.kids[1], fr, path + "/else");
            if (!a || !b) return std::nullopt;
            if (!(*a == *b)) {
                diag(path, "type mismatch: If branches " + a->to_string() + " and " + b->to_string());
                return std::nullopt;
            }
            r = a;
            break;
        }
        case K::GetSds:
        case K::SetSds: {
            const SdsDecl* d = p_.find_sds(t.ref);
            if (!d) {
                diag(path, "unknown sds s" + std::to_string(t.ref));
                return std::nullopt;
            }
            if (t.kind == K::GetSds) {
                if (!want(0, 0)) return std::nullopt;
            } else {
                if (!want(1, 0)) return std::nullopt;
                if (!(*at[0] == d->type)) {
                    diag(path, "type mismatch: setSds of " + at[0]->to_string() + " into " + d->type.to_string());
                    return std::nullopt;
                }
            }
            r = d->type;
            break;
        }
        case K::ReadA:
            if (!want(0, 0) || !pin_ok(true)) return std::nullopt;
            r = Type::integer();
            break;
        case K::WriteA:
            if (!want(1, 0) || !pin_ok(true) || !arg_is(0, TypeKind::Int)) return std::nullopt;
            r = Type::integer();
            break;
        case K::ReadD:
            if (!want(0, 0) || !pin_ok(false)) return std::nullopt;
            r = Type::boolean();
            break;
        case K::WriteD:
            if (!want(1, 0) || !pin_ok(false) || !arg_is(0, TypeKind::Bool)) return std::nullopt;
            r = Type::boolean();
            break;
        case K::DhtTemp:
        case K::DhtHum:
            if (!want(0, 0) || !periph(PeriphDecl::Kind::Dht)) return std::nullopt;
            r = Type::integer();
            break;
        case K::LmDot:
            if (!want(3, 0) || !periph(PeriphDecl::Kind::LedMatrix)) return std::nullopt;
            if (!arg_is(0, TypeKind::Int) || !arg_is(1, TypeKind::Int) || !arg_is(2, TypeKind::Bool)) return std::nullopt;
            r = Type::unit();
            break;
        case K::LmIntensity:
            if (!want(1, 0) || !periph(PeriphDecl::Kind::LedMatrix) || !arg_is(0, TypeKind::Int)) return std::nullopt;
            r = Type::unit();
            break;
        case K::LmClear:
        case K::LmDisplay:
            if (!want(0, 0) || !periph(PeriphDecl::Kind::LedMatrix)) return std::nullopt;
            r = Type::unit();
            break;
        }
        t.type = *r;
        return r;
    }

    // Task calls reachable while a task is being instantiated (i.e. not hidden
    // behind a step continuation) must not form a cycle: instantiation would
    // never finish.
    void eager_calls(const TaskExpr& t, std::set<int>& out)
    {
        if (t.kind == TaskExpr::Kind::Call) out.insert(t.ref);
        for (auto& k : t.kids) eager_calls(*k, out);
    }

    void check_unguarded()
    {
        std::size_t n = p_.funs.size();
        std::vector<std::set<int>> g(n);
        for (std::size_t i = 0; i < n; ++i)
            if (p_.funs[i].is_task) eager_calls(*p_.funs[i].task_body, g[i]);
        std::vector<int> state(n, 0);
        std::function<bool(int)> dfs = [&](int v) {
            state[v] = 1;
            for (int w : g[v]) {
                if (state[w] == 1) return true;
                if (state[w] == 0 && dfs(w)) return true;
            }
            state[v] = 2;
            return false;
        };
        for (std::size_t i = 0; i < n; ++i) {
            if (state[i] == 0 && dfs(static_cast<int>(i))) {
                diag("fun f" + std::to_string(i), "unguarded recursion: task calls itself without an intervening step");
                return;
            }
        }
    }

    void all_calls(const Expr& e, std::set<int>& out)
    {
        if (e.kind == Expr::Kind::Call) out.insert(e.fun);
        for (auto& k : e.kids) all_calls(*k, out);
    }

    void all_calls(const TaskExpr& t, std::set<int>& out)
    {
        if (t.kind == TaskExpr::Kind::Call) out.insert(t.ref);
        for (auto& a : t.args) all_calls(*a, out);
        for (auto& k : t.kids) all_calls(*k, out);
        for (auto& c : t.conts) {
            if (c.pred) all_calls(*c.pred, out);
            all_calls(*c.body, out);
        }
    }

    void compute_sccs()
    {
        std::size_t n = p_.funs.size();
        std::vector<std::set<int>> g(n);
        for (std::size_t i = 0; i < n; ++i) {
            const FunDef& f = p_.funs[i];
            if (f.is_task)
                all_calls(*f.task_body, g[i]);
            else
                all_calls(*f.expr_body, g[i]);
        }
        // Tarjan
        scc_.assign(n, -1);
        std::vector<int> index(n, -1), low(n, 0);
        std::vector<bool> on(n, false);
        std::vector<int> stack;
        int counter = 0, comp = 0;
        std::function<void(int)> strong = [&](int v) {
            index[v] = low[v] = counter++;
            stack.push_back(v);
            on[v] = true;
            for (int w : g[v]) {
                if (index[w] < 0) {
                    strong(w);
                    low[v] = std::min(low[v], low[w]);
                } else if (on[w]) {
                    low[v] = std::min(low[v], index[w]);
                }
            }
            if (low[v] == index[v]) {
                int w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on[w] = false;
                    scc_[w] = comp;
                } while (w != v);
                ++comp;
            }
        };
        for (std::size_t i = 0; i < n; ++i)
            if (index[i] < 0) strong(static_cast<int>(i));
    }

    void tail_expr(Expr& e, int owner)
    {
        if (e.kind == Expr::Kind::If) {
            tail_expr(*e.kids[1], owner);
            tail_expr(*e.kids[2], owner);
        } else if (e.kind == Expr::Kind::Call && scc_[e.fun] == scc_[owner]) {
            e.tail = true;
        }
    }

    // A continuation body replaces the step node that spawned it, so a call
    // at its root reuses the node instead of nesting.
    void tail_body(TaskExpr& t, int owner)
    {
        if (t.kind == TaskExpr::Kind::If) {
            tail_body(*t.kids[0], owner);
            tail_body(*t.kids[1], owner);
        } else if (t.kind == TaskExpr::Kind::Call && scc_[t.ref] == scc_[owner]) {
            t.tail = true;
        }
    }

    void tail_task(TaskExpr& t, int owner)
    {
        for (auto& k : t.kids) tail_task(*k, owner);
        for (auto& c : t.conts) {
            tail_task(*c.body, owner);
            tail_body(*c.body, owner);
        }
    }

    void mark_tails()
    {
        compute_sccs();
        for (std::size_t i = 0; i < p_.funs.size(); ++i) {
            FunDef& f = p_.funs[i];
            if (f.is_task)
                tail_task(*f.task_body, static_cast<int>(i));
            else
                tail_expr(*f.expr_body, static_cast<int>(i));
        }
    }

    Program& p_;
    ValidationReport report_;
    std::vector<int> scc_;
};

} // namespace

ValidationReport validate(Program& p)
{
    return Checker(p).run();
}

} // namespace mtask
