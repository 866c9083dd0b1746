#include "mtask/vm.hpp"

#include <algorithm>
#include <limits>

namespace mtask {

namespace {

using K = TaskExpr::Kind;
using NodeId = std::uint32_t;
using Env = std::vector<DynValue>;
constexpr NodeId kNil = std::numeric_limits<NodeId>::max();

struct VNode {
    K kind = K::Rtrn;
    bool used = false;
    std::uint8_t ref = 0;
    Pin pin;
    std::uint16_t target = 0;
    std::uint8_t nvals = 0;
    DynValue vals[3];
    NodeId kids[2] = {kNil, kNil};
    std::shared_ptr<const Env> env;
    std::int64_t deadline = 0;
    bool done = false;
    DynTaskValue latched;
    std::uint64_t stamp = 0;
    std::uint64_t serial = 0;
};

// Segments decoded once at load; jump operands become instruction indices.
struct Code {
    BytecodeImage img;
    std::vector<std::vector<Instr>> segs;

    explicit Code(const BytecodeImage& image) : img(image)
    {
        for (const auto& s : img.segments) {
            std::vector<Instr> out;
            std::vector<std::size_t> index(s.code.size() + 1, 0);
            std::size_t pc = 0;
            while (pc < s.code.size()) {
                index[pc] = out.size();
                out.push_back(decode_instr(s, pc));
                pc += out.back().size;
            }
            index[s.code.size()] = out.size();
            for (auto& ins : out)
                if (ins.op == Op::Jmp || ins.op == Op::JmpIfFalse) ins.target = static_cast<std::uint16_t>(index.at(ins.target));
            segs.push_back(std::move(out));
        }
    }
};

struct SdsSlot {
    DynValue value;
    bool lifted = false;
    bool dirty = false;
};

struct VTask {
    std::uint32_t id = 0;
    std::shared_ptr<const Code> code;
    NodeId root = kNil;
    std::uint64_t pass = 0;
    std::uint64_t serial = 0;
    std::optional<TrapKind> failure;
    bool failure_reported = false;
    bool reported = false;
    DynTaskValue value;
    std::map<std::uint8_t, SdsSlot> sds;
};

std::uint8_t operand_count(K k)
{
    switch (k) {
    case K::Rtrn:
    case K::Delay:
    case K::SetSds:
    case K::WriteA:
    case K::WriteD:
    case K::LmIntensity: return 1;
    case K::LmDot: return 3;
    default: return 0;
    }
}

bool accepts(StepCont::Kind k, const DynTaskValue& v)
{
    switch (k) {
    case StepCont::Kind::IfValue: return v.has_value();
    case StepCont::Kind::IfStable: return v.is_stable();
    case StepCont::Kind::IfUnstable: return v.is_unstable();
    case StepCont::Kind::IfNoValue: return !v.has_value();
    case StepCont::Kind::Always: return true;
    }
    return false;
}

} // namespace

const char* to_string(VmErrorKind k)
{
    switch (k) {
    case VmErrorKind::DuplicateTask: return "duplicate task";
    case VmErrorKind::UnknownTask: return "unknown task";
    case VmErrorKind::UnknownSds: return "unknown sds";
    case VmErrorKind::OutOfArena: return "out of arena";
    case VmErrorKind::UnsupportedPeripheral: return "unsupported peripheral";
    case VmErrorKind::UnknownPeripheral: return "unknown peripheral";
    }
    return "?";
}

struct VM::Impl {
    std::vector<VNode> arena;
    std::vector<NodeId> free_list;
    std::map<std::uint32_t, VTask> tasks;

    // interpreter state, reused across builds
    struct Frame {
        std::uint16_t seg;
        std::size_t pc;
        std::shared_ptr<const Env> env;
        int depth;
    };
    std::vector<DynValue> stack;
    std::vector<NodeId> nodes;
    std::vector<Frame> frames;
    std::vector<NodeId> alloc_log;
    int build_nesting = 0;

    explicit Impl(std::size_t cap) : arena(cap)
    {
        free_list.reserve(cap);
        for (std::size_t i = cap; i > 0; --i) free_list.push_back(static_cast<NodeId>(i - 1));
    }

    void free_tree(NodeId id)
    {
        if (id == kNil) return;
        VNode& n = arena[id];
        for (NodeId k : n.kids) free_tree(k);
        n = VNode{};
        free_list.push_back(id);
    }
};

struct Machine {
    VM& vm;
    VM::Impl& im;
    VTask& task;
    std::int64_t now;
    std::uint64_t pass;
    std::vector<Notification>* sds_notes = nullptr;
    int fire_depth = 0;
    std::uint64_t executed = 0;

    const Code& code() const { return *task.code; }
    VNode& node(NodeId id) { return im.arena[id]; }

    NodeId alloc(K kind)
    {
        if (im.free_list.empty()) throw Trap(TrapKind::OutOfArena);
        NodeId id = im.free_list.back();
        im.free_list.pop_back();
        VNode& n = im.arena[id];
        n = VNode{};
        n.used = true;
        n.kind = kind;
        n.serial = ++task.serial;
        im.alloc_log.push_back(id);
        vm.peak_nodes_ = std::max(vm.peak_nodes_, im.arena.size() - im.free_list.size());
        return id;
    }

    void push(DynValue v)
    {
        if (im.stack.size() >= vm.cfg_.max_stack) throw Trap(TrapKind::StackOverflow);
        im.stack.push_back(std::move(v));
        vm.peak_stack_ = std::max(vm.peak_stack_, im.stack.size());
    }

    DynValue pop()
    {
        if (im.stack.empty()) throw Trap(TrapKind::TypeError);
        DynValue v = std::move(im.stack.back());
        im.stack.pop_back();
        return v;
    }

    NodeId pop_node()
    {
        if (im.nodes.empty()) throw Trap(TrapKind::TypeError);
        NodeId n = im.nodes.back();
        im.nodes.pop_back();
        return n;
    }

    static bool truth(const DynValue& v)
    {
        if (v.kind() != TypeKind::Bool) throw Trap(TrapKind::TypeError);
        return v.as_bool();
    }

    // Runs a segment to completion on the shared stacks.
    void run(std::uint16_t seg, std::shared_ptr<const Env> env, int depth)
    {
        const std::size_t base = im.frames.size();
        im.frames.push_back({seg, 0, std::move(env), depth});
        vm.peak_frames_ = std::max(vm.peak_frames_, im.frames.size());
        while (im.frames.size() > base) {
            auto& fr = im.frames.back();
            const auto& instrs = code().segs[fr.seg];
            if (fr.pc >= instrs.size()) {
                im.frames.pop_back();
                continue;
            }
            const Instr& ins = instrs[fr.pc++];
            if (++executed > vm.cfg_.max_instructions) throw Trap(TrapKind::Watchdog);
            switch (ins.op) {
            case Op::PushLit: push(ins.lit); break;
            case Op::PushArg:
                if (ins.a >= fr.env->size()) throw Trap(TrapKind::TypeError);
                push((*fr.env)[ins.a]);
                break;
            case Op::Add:
            case Op::Sub:
            case Op::Mul:
            case Op::Div: {
                DynValue b = pop();
                DynValue a = pop();
                auto op = static_cast<ArithOp>(static_cast<std::uint8_t>(ins.op) - static_cast<std::uint8_t>(Op::Add));
                push(apply_arith(op, a, b, RealWidth::F32));
                break;
            }
            case Op::Eq:
            case Op::Ne:
            case Op::Lt:
            case Op::Gt:
            case Op::Le:
            case Op::Ge: {
                DynValue b = pop();
                DynValue a = pop();
                auto op = static_cast<CmpOp>(static_cast<std::uint8_t>(ins.op) - static_cast<std::uint8_t>(Op::Eq));
                push(DynValue::boolean(apply_cmp(op, a, b)));
                break;
            }
            case Op::And:
            case Op::Or: {
                bool b = truth(pop());
                bool a = truth(pop());
                push(DynValue::boolean(ins.op == Op::And ? (a && b) : (a || b)));
                break;
            }
            case Op::Not: push(DynValue::boolean(!truth(pop()))); break;
            case Op::Jmp: fr.pc = ins.target; break;
            case Op::JmpIfFalse:
                if (!truth(pop())) fr.pc = ins.target;
                break;
            case Op::MkPair: {
                DynValue b = pop();
                DynValue a = pop();
                push(DynValue::pair(std::move(a), std::move(b)));
                break;
            }
            case Op::Fst: push(pop().first()); break;
            case Op::Snd: push(pop().second()); break;
            case Op::Call:
            case Op::TailCall: {
                const FunEntry& f = code().img.funs[ins.a];
                auto callee = std::make_shared<Env>(f.frame_size);
                for (int i = ins.b - 1; i >= 0; --i) (*callee)[i] = pop();
                if (ins.op == Op::TailCall) {
                    fr.seg = f.segment;
                    fr.pc = 0;
                    fr.env = std::move(callee);
                } else {
                    if (fr.depth + 1 > vm.cfg_.max_depth) throw Trap(TrapKind::CallDepth);
                    int d = fr.depth + 1;
                    im.frames.push_back({f.segment, 0, std::move(callee), d});
                    vm.peak_frames_ = std::max(vm.peak_frames_, im.frames.size());
                }
                break;
            }
            case Op::Return: im.frames.pop_back(); break;
            case Op::Task: {
                // building an Rpeat child pushes frames, so fr must not be held across
                auto env = fr.env;
                task_node(ins, env, fr.depth);
                break;
            }
            }
        }
    }

    void task_node(const Instr& ins, const std::shared_ptr<const Env>& env, int depth)
    {
        NodeId id = alloc(ins.task);
        std::uint8_t nv = operand_count(ins.task);
        for (int i = nv - 1; i >= 0; --i) node(id).vals[i] = pop();
        VNode& n = node(id);
        n.nvals = nv;
        n.ref = ins.a;
        n.pin = ins.pin;
        n.target = ins.target;
        switch (ins.task) {
        case K::Delay: n.deadline = now + n.vals[0].as_int(); break;
        case K::And:
        case K::Or:
            n.kids[1] = pop_node();
            n.kids[0] = pop_node();
            break;
        case K::Step:
            n.kids[0] = pop_node();
            n.env = env;
            break;
        case K::Rpeat: {
            n.env = env;
            NodeId child = build(ins.target, env, depth);
            node(id).kids[0] = child;
            node(child).stamp = pass;
            break;
        }
        default: break;
        }
        im.nodes.push_back(id);
    }

    // Materializes a task segment. On any trap the nodes allocated by this
    // build are returned to the pool.
    NodeId build(std::uint16_t seg, std::shared_ptr<const Env> env, int depth)
    {
        if (im.build_nesting == 0) im.alloc_log.clear();
        const std::size_t mark = im.alloc_log.size();
        const std::size_t stack_base = im.stack.size();
        const std::size_t node_base = im.nodes.size();
        const std::size_t frame_base = im.frames.size();
        if (im.build_nesting >= vm.cfg_.max_build_nesting) throw Trap(TrapKind::StackOverflow);
        ++im.build_nesting;
        try {
            run(seg, std::move(env), depth);
            if (im.nodes.size() != node_base + 1 || im.stack.size() != stack_base) throw Trap(TrapKind::TypeError);
        } catch (...) {
            --im.build_nesting;
            for (std::size_t i = im.alloc_log.size(); i > mark; --i) {
                NodeId id = im.alloc_log[i - 1];
                im.arena[id] = VNode{};
                im.free_list.push_back(id);
            }
            im.alloc_log.resize(mark);
            im.stack.resize(stack_base);
            im.nodes.resize(node_base);
            im.frames.resize(frame_base);
            throw;
        }
        --im.build_nesting;
        return pop_node();
    }

    DynValue eval(std::uint16_t seg, std::shared_ptr<const Env> env)
    {
        const std::size_t stack_base = im.stack.size();
        const std::size_t frame_base = im.frames.size();
        try {
            run(seg, std::move(env), 1);
            if (im.stack.size() != stack_base + 1) throw Trap(TrapKind::TypeError);
            return pop();
        } catch (...) {
            im.stack.resize(stack_base);
            im.frames.resize(frame_base);
            throw;
        }
    }

    DynTaskValue step(NodeId& slot)
    {
        DynTaskValue v = step_inner(slot);
        if (vm.trace) vm.trace(task.id, node(slot).serial, v);
        return v;
    }

    DynTaskValue step_inner(NodeId& slot)
    {
        VNode& n = node(slot);
        PeripheralBus& bus = vm.bus_;
        switch (n.kind) {
        case K::Rtrn: return DynTaskValue::stable(n.vals[0]);
        case K::Delay:
            if (!n.done && now >= n.deadline) {
                n.done = true;
                n.latched = DynTaskValue::stable(DynValue::integer(static_cast<std::int32_t>(now - n.deadline)));
            }
            return n.latched;
        case K::ReadA: return DynTaskValue::unstable(DynValue::integer(bus.read_analog(n.pin)));
        case K::ReadD: return DynTaskValue::unstable(DynValue::boolean(bus.read_digital(n.pin)));
        case K::WriteA:
            if (!n.done) {
                bus.write_analog(n.pin, n.vals[0].as_int(), now);
                n.done = true;
            }
            return DynTaskValue::stable(n.vals[0]);
        case K::WriteD:
            if (!n.done) {
                bus.write_digital(n.pin, n.vals[0].as_bool(), now);
                n.done = true;
            }
            return DynTaskValue::stable(n.vals[0]);
        case K::GetSds: return DynTaskValue::unstable(task.sds.at(n.ref).value);
        case K::SetSds:
            if (!n.done) {
                SdsSlot& s = task.sds.at(n.ref);
                s.value = n.vals[0];
                if (s.lifted) {
                    s.dirty = true;
                    Notification note;
                    note.kind = Notification::Kind::SdsWritten;
                    note.task = task.id;
                    note.sds = n.ref;
                    note.sds_value = n.vals[0];
                    if (sds_notes) sds_notes->push_back(note);
                }
                n.done = true;
            }
            return DynTaskValue::stable(n.vals[0]);
        case K::DhtTemp: return DynTaskValue::unstable(DynValue::integer(bus.temperature));
        case K::DhtHum: return DynTaskValue::unstable(DynValue::integer(bus.humidity));
        case K::LmDot:
        case K::LmIntensity:
        case K::LmClear:
        case K::LmDisplay:
            if (!n.done) {
                if (n.kind == K::LmDot)
                    bus.lm_dot(n.vals[0].as_int(), n.vals[1].as_int(), n.vals[2].as_bool());
                else if (n.kind == K::LmIntensity)
                    bus.lm_intensity(n.vals[0].as_int());
                else if (n.kind == K::LmClear)
                    bus.lm_clear();
                else
                    bus.lm_display();
                n.done = true;
            }
            return DynTaskValue::stable(DynValue::unit());
        case K::And: {
            auto l = step(n.kids[0]);
            auto r = step(n.kids[1]);
            return combine_and(l, r);
        }
        case K::Or: {
            auto l = step(n.kids[0]);
            auto r = step(n.kids[1]);
            if (n.latched.is_stable()) return n.latched;
            auto v = combine_or(l, r);
            if (v.is_stable()) n.latched = v;
            return v;
        }
        case K::Rpeat: {
            auto v = step(n.kids[0]);
            if (v.is_stable() && node(n.kids[0]).stamp != pass) {
                NodeId fresh;
                try {
                    fresh = build(n.target, n.env, 1);
                } catch (const Trap& t) {
                    // old and new child do not fit side by side: retry next cycle
                    if (t.kind == TrapKind::OutOfArena) return DynTaskValue::no_value();
                    throw;
                }
                node(fresh).stamp = pass;
                im.free_tree(n.kids[0]);
                n.kids[0] = fresh;
                step(n.kids[0]);
            }
            return DynTaskValue::no_value();
        }
        case K::Step: {
            auto v = step(n.kids[0]);
            if (n.stamp == pass) return DynTaskValue::no_value();
            const auto& table = code().img.conts[n.target];
            auto env = std::make_shared<Env>(*n.env);
            const ContEntry* hit = nullptr;
            for (const auto& c : table) {
                if (!accepts(c.kind, v)) continue;
                if (c.binder != kNoSlot && v.has_value()) {
                    if (c.binder >= env->size()) env->resize(c.binder + 1);
                    (*env)[c.binder] = v.value();
                }
                if (c.pred != kNoSegment && !truth(eval(c.pred, env))) continue;
                hit = &c;
                break;
            }
            if (!hit) return DynTaskValue::no_value();
            NodeId body = build(hit->body, env, 1);
            node(body).stamp = pass;
            im.free_tree(slot);  // prunes the left-hand side
            slot = body;
            if (++fire_depth > vm.cfg_.max_depth) throw Trap(TrapKind::CallDepth);
            auto r = step(slot);
            --fire_depth;
            return r;
        }
        case K::Call:
        case K::If: break;
        }
        throw Trap(TrapKind::TypeError);
    }
};

VM::VM(PeripheralBus& bus, const VmConfig& cfg) : bus_(bus), cfg_(cfg), impl_(std::make_unique<Impl>(cfg.arena_capacity)) {}

VM::~VM() = default;

void VM::load_task(std::uint32_t id, const BytecodeImage& img, std::int64_t now)
{
    if (impl_->tasks.count(id)) throw VmError(VmErrorKind::DuplicateTask);
    for (const auto& p : img.periphs) {
        bool ok = p.kind == PeriphDecl::Kind::Dht ? bus_.config().has_dht : bus_.config().has_matrix;
        if (!ok) throw VmError(VmErrorKind::UnsupportedPeripheral);
    }
    for (const auto& seg : img.segments) {
        for (std::size_t pc = 0; pc < seg.code.size();) {
            Instr in = decode_instr(seg, pc);
            pc += in.size;
            if (in.op != Op::Task) continue;
            using K = TaskExpr::Kind;
            bool pin_op = in.task == K::ReadA || in.task == K::WriteA || in.task == K::ReadD || in.task == K::WriteD;
            if (pin_op && !bus_.pin_exists(in.pin)) throw VmError(VmErrorKind::UnknownPeripheral);
        }
    }
    VTask t;
    t.id = id;
    t.code = std::make_shared<const Code>(img);
    for (const auto& s : img.sds) t.sds[s.id] = SdsSlot{s.initial, s.lifted, false};
    t.pass = 0;
    Machine m{*this, *impl_, t, now, 1};
    try {
        auto env = std::make_shared<Env>(img.main_frame);
        t.root = m.build(img.entry, env, 1);
    } catch (const Trap& e) {
        if (e.kind == TrapKind::OutOfArena) throw VmError(VmErrorKind::OutOfArena);
        t.failure = e.kind;
    } catch (const TypeError&) {
        t.failure = TrapKind::TypeError;
    }
    impl_->tasks.emplace(id, std::move(t));
}

void VM::unload_task(std::uint32_t id)
{
    auto it = impl_->tasks.find(id);
    if (it == impl_->tasks.end()) throw VmError(VmErrorKind::UnknownTask);
    impl_->free_tree(it->second.root);
    impl_->tasks.erase(it);
}

std::vector<Notification> VM::eval_cycle(std::int64_t now)
{
    std::vector<Notification> out;
    std::vector<Notification> sds_notes;
    for (auto& [id, t] : impl_->tasks) {
        if (!t.failure) {
            ++t.pass;
            Machine m{*this, *impl_, t, now, t.pass, &sds_notes};
            try {
                DynTaskValue v = m.step(t.root);
                if (!t.reported || !(v == t.value)) {
                    Notification n;
                    n.kind = Notification::Kind::TaskValueChanged;
                    n.task = id;
                    n.value = v;
                    out.push_back(n);
                    t.reported = true;
                }
                t.value = v;
            } catch (const Trap& e) {
                t.failure = e.kind;
            } catch (const TypeError&) {
                t.failure = TrapKind::TypeError;
            }
            impl_->stack.clear();
            impl_->nodes.clear();
            impl_->frames.clear();
            if (t.failure) {
                impl_->free_tree(t.root);
                t.root = kNil;
            }
        }
        if (t.failure && !t.failure_reported) {
            Notification n;
            n.kind = Notification::Kind::TaskFailed;
            n.task = id;
            n.reason = *t.failure;
            out.push_back(n);
            t.failure_reported = true;
            impl_->free_tree(t.root);
            t.root = kNil;
        }
    }
    out.insert(out.end(), sds_notes.begin(), sds_notes.end());
    return out;
}

void VM::sds_write_from_server(std::uint32_t task, std::uint8_t sds, const DynValue& v)
{
    auto it = impl_->tasks.find(task);
    if (it == impl_->tasks.end()) throw VmError(VmErrorKind::UnknownTask);
    auto s = it->second.sds.find(sds);
    if (s == it->second.sds.end() || !s->second.lifted) throw VmError(VmErrorKind::UnknownSds);
    DynValue r = round_real(v, RealWidth::F32);
    if (!r.has_type(s->second.value.type())) throw TypeError("SDS value of wrong type");
    s->second.value = r;
    s->second.dirty = false;
}

bool VM::has_task(std::uint32_t id) const { return impl_->tasks.count(id) > 0; }

std::vector<std::uint32_t> VM::task_ids() const
{
    std::vector<std::uint32_t> ids;
    for (const auto& kv : impl_->tasks) ids.push_back(kv.first);
    return ids;
}

DynTaskValue VM::task_value(std::uint32_t id) const
{
    auto it = impl_->tasks.find(id);
    if (it == impl_->tasks.end()) throw VmError(VmErrorKind::UnknownTask);
    return it->second.value;
}

std::optional<TrapKind> VM::task_failure(std::uint32_t id) const
{
    auto it = impl_->tasks.find(id);
    if (it == impl_->tasks.end()) throw VmError(VmErrorKind::UnknownTask);
    return it->second.failure;
}

std::uint64_t VM::passes(std::uint32_t id) const
{
    auto it = impl_->tasks.find(id);
    if (it == impl_->tasks.end()) throw VmError(VmErrorKind::UnknownTask);
    return it->second.pass;
}

std::optional<DynValue> VM::sds_value(std::uint32_t task, std::uint8_t sds) const
{
    auto it = impl_->tasks.find(task);
    if (it == impl_->tasks.end()) return std::nullopt;
    auto s = it->second.sds.find(sds);
    if (s == it->second.sds.end()) return std::nullopt;
    return s->second.value;
}

std::size_t VM::live_nodes() const { return impl_->arena.size() - impl_->free_list.size(); }

std::size_t VM::free_nodes() const { return impl_->free_list.size(); }

void VM::reset_peaks()
{
    peak_nodes_ = live_nodes();
    peak_stack_ = 0;
    peak_frames_ = 0;
}

} // namespace mtask
