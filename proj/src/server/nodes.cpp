#include "mtask/bytecode.hpp"
#include "mtask/server/node.hpp"

#include <spdlog/spdlog.h>

namespace mtask::server {

namespace {

template <class N, class... A>
Task make(A... args)
{
    return Task([=]() -> std::unique_ptr<Node> { return std::make_unique<N>(args...); });
}

// ---- basic tasks

class ReturnNode : public Node {
public:
    explicit ReturnNode(Json v) : Node("return"), v_(std::move(v)) {}

protected:
    Value eval(Engine&) override { return Value::stable(v_); }

private:
    Json v_;
};

class FailNode : public Node {
public:
    explicit FailNode(std::string reason) : Node("fail"), reason_(std::move(reason)) {}

protected:
    Value eval(Engine&) override { throw TaskFailure(reason_); }

private:
    std::string reason_;
};

// ---- editors

class EditorNode : public Node {
public:
    enum class Mode { Enter, Update, View, UpdateShared, ViewShared };

    struct Spec {
        Mode mode = Mode::View;
        std::string prompt;
        std::optional<Schema> schema;
        std::optional<Json> local;
        std::string key;
        std::function<Json(const Json&)> to;
        std::function<Json(const Json&, const Json&)> back;
        std::optional<Schema> shown;
    };

    explicit EditorNode(Spec s) : Node("editor"), s_(std::move(s)) {}

    void on_edit(Engine& eng, const Json& v) override
    {
        if (s_.mode == Mode::View || s_.mode == Mode::ViewShared) throw ActionDisabled(path() + " is a view");
        Json in = shown_schema(eng).check(v);
        switch (s_.mode) {
        case Mode::Enter: s_.local = in; break;
        case Mode::Update: s_.local = s_.back ? s_.back(*s_.local, in) : in; break;
        case Mode::UpdateShared: {
            if (eng.sds_read_only(s_.key)) throw ActionDisabled("SDS '" + s_.key + "' is read-only");
            Json next = s_.back ? s_.back(eng.sds_get(s_.key), in) : in;
            eng.write_sds(s_.key, next);
            break;
        }
        default: break;
        }
        eng.mark(this);
    }

    void describe(Json& out) const override
    {
        static const char* modes[] = {"enter", "update", "view", "update", "view"};
        out["editor"] = modes[static_cast<int>(s_.mode)];
        out["prompt"] = s_.prompt;
        if (s_.mode == Mode::UpdateShared || s_.mode == Mode::ViewShared) out["sds"] = s_.key;
        if (schema_) out["schema"] = schema_->to_json();
        if (shown_) out["display"] = *shown_;
    }

protected:
    void start(Engine& eng) override
    {
        if (s_.mode == Mode::UpdateShared || s_.mode == Mode::ViewShared) {
            eng.subscribe(s_.key, id());
            if (!s_.schema && !s_.shown) s_.schema = Schema::infer(eng.sds_get(s_.key));
        } else if (s_.local && !s_.schema) {
            s_.schema = Schema::infer(*s_.local);
        }
        schema_ = shown_schema(eng);
    }

    Value eval(Engine& eng) override
    {
        std::optional<Json> stored;
        switch (s_.mode) {
        case Mode::Enter:
            if (!s_.local) {
                shown_.reset();
                return Value::no_value();
            }
            shown_ = *s_.local;
            // the enter lens maps what was typed to the task value
            return Value::unstable(s_.to ? s_.to(*s_.local) : *s_.local);
        case Mode::Update:
        case Mode::View: stored = *s_.local; break;
        case Mode::UpdateShared:
        case Mode::ViewShared: stored = eng.sds_get(s_.key); break;
        }
        shown_ = s_.to ? s_.to(*stored) : *stored;
        return Value::unstable(*stored);
    }

    void on_stop(Engine& eng) override
    {
        if (s_.mode == Mode::UpdateShared || s_.mode == Mode::ViewShared) eng.unsubscribe(s_.key, id());
    }

private:
    Schema shown_schema(Engine& eng) const
    {
        if (s_.shown) return *s_.shown;
        if (s_.mode == Mode::Enter) return *s_.schema;
        if (!s_.to && s_.schema) return *s_.schema;
        Json stored = (s_.mode == Mode::UpdateShared || s_.mode == Mode::ViewShared) ? eng.sds_get(s_.key) : *s_.local;
        return Schema::infer(s_.to ? s_.to(stored) : stored);
    }

    Spec s_;
    std::optional<Schema> schema_;
    std::optional<Json> shown_;
};

// ---- sequential

class StepNode : public Node {
public:
    StepNode(Task t, std::vector<TaskCont> conts) : Node("step"), t_(std::move(t)), conts_(std::move(conts)) {}

    void each_child(const std::function<void(Node&)>& f) const override
    {
        if (left_) f(*left_);
        if (right_) f(*right_);
    }

    void on_action(Engine& eng, const std::string& a) override
    {
        bool known = false;
        for (const auto& c : conts_) {
            if (c.kind != TaskCont::Kind::OnAction || c.action != a) continue;
            known = true;
            if (!right_ && left_ && c.guard(left_->value())) {
                pending_ = a;
                eng.mark(this);
                return;
            }
        }
        if (!known) Node::on_action(eng, a);
        throw ActionDisabled("action '" + a + "' is disabled at " + path());
    }

    void describe(Json& out) const override
    {
        Json acts = Json::array();
        for (const auto& c : conts_) {
            if (c.kind != TaskCont::Kind::OnAction) continue;
            bool enabled = !right_ && left_ && c.guard(left_->value()).has_value();
            acts.push_back({{"name", c.action}, {"enabled", enabled}});
        }
        if (!acts.empty()) out["actions"] = acts;
    }

protected:
    void start(Engine& eng) override { left_ = adopt(eng, t_, "left"); }

    Value eval(Engine& eng) override
    {
        if (right_) return right_->rewrite(eng);
        Value l = left_->rewrite(eng);
        std::optional<Task> next;
        if (pending_) {
            std::string a = *pending_;
            pending_.reset();
            for (const auto& c : conts_)
                if (c.kind == TaskCont::Kind::OnAction && c.action == a && (next = c.guard(l))) break;
        }
        if (!next)
            for (const auto& c : conts_)
                if (c.kind == TaskCont::Kind::OnValue && (next = c.guard(l))) break;
        if (!next) return Value::no_value();
        drop(eng, left_);
        right_ = adopt(eng, *next, "next");
        return right_->rewrite(eng);
    }

private:
    Task t_;
    std::vector<TaskCont> conts_;
    std::unique_ptr<Node> left_, right_;
    std::optional<std::string> pending_;
};

class MapNode : public Node {
public:
    MapNode(Task t, std::function<Json(const Json&)> f) : Node("map"), t_(std::move(t)), f_(std::move(f)) {}

    void each_child(const std::function<void(Node&)>& f) const override
    {
        if (body_) f(*body_);
    }

protected:
    void start(Engine& eng) override { body_ = adopt(eng, t_, "body"); }
    Value eval(Engine& eng) override { return body_->rewrite(eng).map(f_); }

private:
    Task t_;
    std::function<Json(const Json&)> f_;
    std::unique_ptr<Node> body_;
};

class ForeverNode : public Node {
public:
    explicit ForeverNode(Task t) : Node("forever"), t_(std::move(t)) {}

    void each_child(const std::function<void(Node&)>& f) const override
    {
        if (body_) f(*body_);
    }

protected:
    void start(Engine& eng) override { body_ = adopt(eng, t_, "body"); }

    Value eval(Engine& eng) override
    {
        Value v = body_->rewrite(eng);
        if (v.is_stable()) {
            // one restart per rewrite, so an instantly stable body cannot spin
            drop(eng, body_);
            body_ = adopt(eng, t_, "body");
            v = body_->rewrite(eng);
        }
        return v.has_value() ? Value::unstable(v.value()) : Value::no_value();
    }

private:
    Task t_;
    std::unique_ptr<Node> body_;
};

// ---- parallel

class ParNode : public Node {
public:
    enum class Mode { And, Or, Left, Right };

    ParNode(Mode m, Task l, Task r) : Node(kind_of(m)), m_(m), lt_(std::move(l)), rt_(std::move(r)) {}

    void each_child(const std::function<void(Node&)>& f) const override
    {
        if (l_) f(*l_);
        if (r_) f(*r_);
    }

protected:
    void start(Engine& eng) override
    {
        l_ = adopt(eng, lt_, "left");
        r_ = adopt(eng, rt_, "right");
    }

    Value eval(Engine& eng) override
    {
        Value l = l_->rewrite(eng);
        Value r = r_->rewrite(eng);
        switch (m_) {
        case Mode::And:
            if (l.has_value() && r.has_value()) return Value::of(Json::array({l.value(), r.value()}), l.is_stable() && r.is_stable());
            return Value::no_value();
        case Mode::Or: return combine_or(l, r);
        case Mode::Left: return l;
        case Mode::Right: return r;
        }
        return Value::no_value();
    }

private:
    static const char* kind_of(Mode m)
    {
        switch (m) {
        case Mode::And: return "-&&-";
        case Mode::Or: return "-||-";
        case Mode::Left: return "-||";
        case Mode::Right: return "||-";
        }
        return "par";
    }

    Mode m_;
    Task lt_, rt_;
    std::unique_ptr<Node> l_, r_;
};

// ---- hybrid

class FeedNode : public Node {
public:
    FeedNode(Task t, std::function<Task(SdsRef)> f) : Node(">&>"), t_(std::move(t)), f_(std::move(f)) {}

    void each_child(const std::function<void(Node&)>& f) const override
    {
        if (l_) f(*l_);
        if (r_) f(*r_);
    }

protected:
    void start(Engine& eng) override
    {
        key_ = eng.fresh_sds(Json::array(), {}, true);
        l_ = adopt(eng, t_, "left");
        r_ = adopt(eng, f_(SdsRef{key_}), "right");
    }

    Value eval(Engine& eng) override
    {
        Value l = l_->rewrite(eng);
        Json m = l.has_value() ? Json::array({l.value()}) : Json::array();
        if (eng.sds_get(key_) != m) eng.write_sds(key_, m);
        return r_->rewrite(eng);
    }

    void on_stop(Engine& eng) override { eng.drop_sds(key_); }

private:
    Task t_;
    std::function<Task(SdsRef)> f_;
    std::string key_;
    std::unique_ptr<Node> l_, r_;
};

class SidestepNode : public Node {
public:
    SidestepNode(Task t, std::vector<TaskCont> conts)
        : Node(">^*"), t_(std::move(t)), conts_(std::move(conts)), forks_(conts_.size())
    {
    }

    void each_child(const std::function<void(Node&)>& f) const override
    {
        if (main_) f(*main_);
        for (const auto& k : forks_)
            if (k) f(*k);
    }

    void on_action(Engine& eng, const std::string& a) override
    {
        bool known = false;
        for (std::size_t i = 0; i < conts_.size(); ++i) {
            const auto& c = conts_[i];
            if (c.kind != TaskCont::Kind::OnAction || c.action != a) continue;
            known = true;
            if (!forks_[i] && c.guard(main_->value())) {
                pending_.push_back(i);
                eng.mark(this);
                return;
            }
        }
        if (!known) Node::on_action(eng, a);
        throw ActionDisabled("action '" + a + "' is disabled at " + path());
    }

    void describe(Json& out) const override
    {
        Json acts = Json::array();
        for (std::size_t i = 0; i < conts_.size(); ++i) {
            const auto& c = conts_[i];
            if (c.kind != TaskCont::Kind::OnAction) continue;
            bool enabled = !forks_[i] && main_ && c.guard(main_->value()).has_value();
            acts.push_back({{"name", c.action}, {"enabled", enabled}});
        }
        if (!acts.empty()) out["actions"] = acts;
    }

protected:
    void start(Engine& eng) override { main_ = adopt(eng, t_, "main"); }

    Value eval(Engine& eng) override
    {
        Value v = main_->rewrite(eng);
        auto fork = [&](std::size_t i, const Task& t) {
            forks_[i] = adopt(eng, t, "fork" + std::to_string(i));
            run(eng, i);
        };
        for (std::size_t i = 0; i < forks_.size(); ++i)
            if (forks_[i]) run(eng, i);
        auto pending = std::move(pending_);
        pending_.clear();
        for (std::size_t i : pending)
            if (!forks_[i])
                if (auto t = conts_[i].guard(v)) fork(i, *t);
        for (std::size_t i = 0; i < conts_.size(); ++i)
            if (conts_[i].kind == TaskCont::Kind::OnValue && !forks_[i])
                if (auto t = conts_[i].guard(v)) fork(i, *t);
        return v;
    }

private:
    void run(Engine& eng, std::size_t i)
    {
        if (forks_[i]->rewrite(eng).is_stable()) drop(eng, forks_[i]);
    }

    Task t_;
    std::vector<TaskCont> conts_;
    std::unique_ptr<Node> main_;
    std::vector<std::unique_ptr<Node>> forks_;
    std::vector<std::size_t> pending_;
};

// ---- shared data

class WithSharedNode : public Node {
public:
    WithSharedNode(Json init, std::function<Task(SdsRef)> f, std::optional<Schema> schema)
        : Node("withShared"), init_(std::move(init)), f_(std::move(f)), schema_(std::move(schema))
    {
    }

    void each_child(const std::function<void(Node&)>& f) const override
    {
        if (body_) f(*body_);
    }

    void describe(Json& out) const override { out["sds"] = key_; }

protected:
    void start(Engine& eng) override
    {
        key_ = eng.fresh_sds(init_, schema_);
        body_ = adopt(eng, f_(SdsRef{key_}), "body");
    }

    Value eval(Engine& eng) override { return body_->rewrite(eng); }
    void on_stop(Engine& eng) override { eng.drop_sds(key_); }

private:
    Json init_;
    std::function<Task(SdsRef)> f_;
    std::optional<Schema> schema_;
    std::string key_;
    std::unique_ptr<Node> body_;
};

class SdsNode : public Node {
public:
    enum class Op { Get, Set, Upd, Watch };

    SdsNode(Op op, SdsRef sds, Json v, std::function<Json(const Json&)> f)
        : Node(name_of(op)), op_(op), key_(std::move(sds.key)), v_(std::move(v)), f_(std::move(f))
    {
    }

    void describe(Json& out) const override { out["sds"] = key_; }

protected:
    void start(Engine& eng) override
    {
        switch (op_) {
        case Op::Get: v_ = eng.sds_get(key_); break;
        case Op::Set:
        case Op::Upd:
            if (eng.sds_read_only(key_)) throw TaskFailure("SDS '" + key_ + "' is read-only");
            if (op_ == Op::Upd) v_ = f_(eng.sds_get(key_));
            eng.write_sds(key_, v_);
            v_ = eng.sds_get(key_);
            break;
        case Op::Watch: eng.subscribe(key_, id()); break;
        }
    }

    Value eval(Engine& eng) override
    {
        if (op_ == Op::Watch) return Value::unstable(eng.sds_get(key_));
        return Value::stable(v_);
    }

    void on_stop(Engine& eng) override
    {
        if (op_ == Op::Watch) eng.unsubscribe(key_, id());
    }

private:
    static const char* name_of(Op op)
    {
        switch (op) {
        case Op::Get: return "get";
        case Op::Set: return "set";
        case Op::Upd: return "upd";
        case Op::Watch: return "watch";
        }
        return "sds";
    }

    Op op_;
    std::string key_;
    Json v_;
    std::function<Json(const Json&)> f_;
};

// ---- devices

class ProxyNode : public Node {
public:
    ProxyNode(std::shared_ptr<const Program> p, DeviceRef dev, std::map<std::string, SdsRef> bindings)
        : Node("liftmTask"), p_(std::move(p)), dev_(dev), bindings_(std::move(bindings))
    {
    }

    void notify(Engine& eng, const std::string& key) override
    {
        if (!task_) return;
        for (const auto& b : binds_) {
            if (b.key != key) continue;
            try {
                eng.send(dev_.id, wire::SdsDown{*task_, b.sds, from_json(eng.sds_get(key), b.type)});
            } catch (const SchemaViolation& e) {
                spdlog::warn("server: not forwarding {} to device: {}", key, e.what());
            }
        }
    }

    void on_device(Engine& eng, const wire::Message& m) override
    {
        if (const auto* tv = std::get_if<wire::TaskValueMsg>(&m)) {
            latest_ = tv->value;
            trace_.push_back(tv->value);
            eng.mark(this);
        } else if (std::holds_alternative<wire::AckTask>(m)) {
            acked_ = true;
        } else if (const auto* r = std::get_if<wire::RejectTask>(&m)) {
            failure_ = "RejectTask: " + r->reason;
            eng.mark(this);
        } else if (const auto* f = std::get_if<wire::TaskFail>(&m)) {
            failure_ = std::string("TaskFail: ") + to_string(f->reason);
            eng.mark(this);
        } else if (const auto* up = std::get_if<wire::SdsUp>(&m)) {
            for (const auto& b : binds_)
                if (b.sds == up->sds) eng.write_sds(b.key, to_json(up->value), id());
        }
    }

    void on_device_lost(Engine& eng, const std::string& reason) override
    {
        task_.reset();
        failure_ = "ConnectFailed: device offline (" + reason + ")";
        eng.mark(this);
    }

    void describe(Json& out) const override
    {
        out["device"] = dev_.id;
        if (task_) out["deviceTask"] = *task_;
        out["acked"] = acked_;
        Json b = Json::object();
        for (const auto& x : binds_) b[std::to_string(x.sds)] = x.key;
        out["bindings"] = b;
    }

    const std::vector<DynTaskValue>& trace() const { return trace_; }

protected:
    void start(Engine& eng) override
    {
        if (!eng.device_connected(dev_.id)) throw TaskFailure("ConnectFailed: device " + std::to_string(dev_.id) + " is offline");
        Program prog = *p_;
        if (!prog.validated) {
            auto report = validate(prog);
            if (!report.ok()) throw TaskFailure("invalid program: " + report.to_string());
        }
        for (const auto& d : prog.sds) {
            if (!d.lifted) continue;
            auto it = bindings_.find(d.key);
            std::string key = it == bindings_.end() ? d.key : it->second.key;
            if (!eng.has_sds(key)) throw TaskFailure("UnknownKey: no SDS '" + key + "' for lifted '" + d.key + "'");
            try {
                from_json(eng.sds_get(key), d.type);
            } catch (const SchemaViolation& e) {
                throw TaskFailure(std::string("SchemaViolation: ") + e.what());
            }
            binds_.push_back({d.id, key, d.type});
        }
        auto image = encode(compile(prog));
        task_ = eng.ship(dev_.id, id(), image);
        for (const auto& b : binds_) {
            eng.send(dev_.id, wire::SdsDown{*task_, b.sds, from_json(eng.sds_get(b.key), b.type)});
            eng.subscribe(b.key, id());
        }
    }

    Value eval(Engine&) override
    {
        if (failure_) throw TaskFailure(*failure_);
        return to_value(latest_);
    }

    void on_stop(Engine& eng) override
    {
        if (task_) eng.forget_task(dev_.id, *task_);
        task_.reset();
        for (const auto& b : binds_) eng.unsubscribe(b.key, id());
    }

private:
    struct Binding {
        std::uint8_t sds;
        std::string key;
        Type type;
    };

    std::shared_ptr<const Program> p_;
    DeviceRef dev_;
    std::map<std::string, SdsRef> bindings_;
    std::vector<Binding> binds_;
    std::optional<std::uint16_t> task_;
    DynTaskValue latest_;
    std::vector<DynTaskValue> trace_;
    std::optional<std::string> failure_;
    bool acked_ = false;
};

class WithDeviceNode : public Node {
public:
    WithDeviceNode(std::optional<DeviceRef> dev, ConnectSpec where, std::function<Task(DeviceRef)> f)
        : Node("withDevice"), dev_(dev), where_(std::move(where)), f_(std::move(f))
    {
    }

    void each_child(const std::function<void(Node&)>& f) const override
    {
        if (body_) f(*body_);
    }

    void on_connected(Engine& eng, ConnectResult& r) override
    {
        if (!r.link) {
            failure_ = r.error_kind + ": " + r.error;
            return;
        }
        dev_ = DeviceRef{eng.add_device(std::move(r.link), r.spec, where_.host + ":" + std::to_string(where_.port))};
        owned_ = true;
    }

    void describe(Json& out) const override
    {
        if (dev_) out["device"] = dev_->id;
        if (!dev_) out["connecting"] = where_.host + ":" + std::to_string(where_.port);
    }

protected:
    void start(Engine& eng) override
    {
        if (dev_) {
            if (!eng.session(dev_->id)) throw TaskFailure("UnknownDevice: no device " + std::to_string(dev_->id));
        } else {
            eng.request_connection(where_, id());
        }
    }

    Value eval(Engine& eng) override
    {
        if (failure_) throw TaskFailure(*failure_);
        if (done_) return *done_;
        if (!dev_) return Value::no_value();
        if (!body_) body_ = adopt(eng, f_(*dev_), "body");
        Value v = body_->rewrite(eng);
        if (v.is_stable()) {
            done_ = v;
            finish(eng);
        }
        return v;
    }

    void on_stop(Engine& eng) override { finish(eng); }

private:
    void finish(Engine& eng)
    {
        drop(eng, body_);
        if (owned_ && dev_) {
            owned_ = false;
            eng.end_session(dev_->id);
        }
    }

    std::optional<DeviceRef> dev_;
    ConnectSpec where_;
    std::function<Task(DeviceRef)> f_;
    std::unique_ptr<Node> body_;
    std::optional<Value> done_;
    std::optional<std::string> failure_;
    bool owned_ = false;
};

} // namespace

// ---- guards

TaskCont on_value(Guard g) { return {TaskCont::Kind::OnValue, "", std::move(g)}; }
TaskCont on_action(std::string action, Guard g) { return {TaskCont::Kind::OnAction, std::move(action), std::move(g)}; }

Guard always(Task t)
{
    return [t](const Value&) -> std::optional<Task> { return t; };
}

Guard never(Task)
{
    return [](const Value&) -> std::optional<Task> { return std::nullopt; };
}

Guard has_value(Then f)
{
    return [f](const Value& v) -> std::optional<Task> {
        if (v.has_value()) return f(v.value());
        return std::nullopt;
    };
}

Guard if_stable(Then f)
{
    return [f](const Value& v) -> std::optional<Task> {
        if (v.is_stable()) return f(v.value());
        return std::nullopt;
    };
}

Guard if_unstable(Then f)
{
    return [f](const Value& v) -> std::optional<Task> {
        if (v.is_unstable()) return f(v.value());
        return std::nullopt;
    };
}

Guard if_value(std::function<bool(const Json&)> pred, Then f)
{
    return [pred, f](const Value& v) -> std::optional<Task> {
        if (v.has_value() && pred(v.value())) return f(v.value());
        return std::nullopt;
    };
}

Guard if_cond(bool c, Task t)
{
    return [c, t](const Value&) -> std::optional<Task> {
        if (c) return t;
        return std::nullopt;
    };
}

Guard without_value(std::optional<Task> t)
{
    return [t](const Value& v) -> std::optional<Task> {
        if (!v.has_value()) return t;
        return std::nullopt;
    };
}

Guard with_value(std::function<std::optional<Task>(const Json&)> f)
{
    return [f](const Value& v) -> std::optional<Task> {
        if (v.has_value()) return f(v.value());
        return std::nullopt;
    };
}

Guard with_stable(std::function<std::optional<Task>(const Json&)> f)
{
    return [f](const Value& v) -> std::optional<Task> {
        if (v.is_stable()) return f(v.value());
        return std::nullopt;
    };
}

Guard with_unstable(std::function<std::optional<Task>(const Json&)> f)
{
    return [f](const Value& v) -> std::optional<Task> {
        if (v.is_unstable()) return f(v.value());
        return std::nullopt;
    };
}

// ---- editors

Task enter(std::string prompt, Schema schema, std::function<Json(const Json&)> enter_as)
{
    EditorNode::Spec s;
    s.mode = EditorNode::Mode::Enter;
    s.prompt = std::move(prompt);
    s.schema = std::move(schema);
    s.to = std::move(enter_as);
    return make<EditorNode>(s);
}

Task update(std::string prompt, Schema schema, Json initial, UpdateAs lens)
{
    EditorNode::Spec s;
    s.mode = EditorNode::Mode::Update;
    s.prompt = std::move(prompt);
    s.local = schema.check(initial);
    s.schema = std::move(schema);
    s.to = std::move(lens.to);
    s.back = std::move(lens.back);
    s.shown = std::move(lens.shown);
    return make<EditorNode>(s);
}

Task view(std::string prompt, Json v, ViewAs lens)
{
    EditorNode::Spec s;
    s.mode = EditorNode::Mode::View;
    s.prompt = std::move(prompt);
    s.local = std::move(v);
    s.to = std::move(lens.to);
    s.shown = std::move(lens.shown);
    return make<EditorNode>(s);
}

Task update_shared(std::string prompt, SdsRef sds, UpdateAs lens)
{
    EditorNode::Spec s;
    s.mode = EditorNode::Mode::UpdateShared;
    s.prompt = std::move(prompt);
    s.key = std::move(sds.key);
    s.to = std::move(lens.to);
    s.back = std::move(lens.back);
    s.shown = std::move(lens.shown);
    return make<EditorNode>(s);
}

Task view_shared(std::string prompt, SdsRef sds, ViewAs lens)
{
    EditorNode::Spec s;
    s.mode = EditorNode::Mode::ViewShared;
    s.prompt = std::move(prompt);
    s.key = std::move(sds.key);
    s.to = std::move(lens.to);
    s.shown = std::move(lens.shown);
    return make<EditorNode>(s);
}

// ---- combinators

Task ret(Json v) { return make<ReturnNode>(std::move(v)); }
Task fail(std::string reason) { return make<FailNode>(std::move(reason)); }

Task step(Task t, std::vector<TaskCont> conts) { return make<StepNode>(std::move(t), std::move(conts)); }

Task bind(Task t, Then f) { return step(std::move(t), {on_action("Continue", has_value(f)), on_value(if_stable(f))}); }
Task bind_stable(Task t, Then f) { return step(std::move(t), {on_value(if_stable(std::move(f)))}); }
Task bind_value(Task t, Then f) { return step(std::move(t), {on_value(has_value(std::move(f)))}); }

Task then(Task t, Task u)
{
    return bind(std::move(t), [u](const Json&) { return u; });
}

Task map_value(Task t, std::function<Json(const Json&)> f) { return make<MapNode>(std::move(t), std::move(f)); }

Task const_value(Task t, Json v)
{
    return map_value(std::move(t), [v](const Json&) { return v; });
}

Task par_and(Task l, Task r) { return make<ParNode>(ParNode::Mode::And, std::move(l), std::move(r)); }
Task par_or(Task l, Task r) { return make<ParNode>(ParNode::Mode::Or, std::move(l), std::move(r)); }
Task par_left(Task l, Task r) { return make<ParNode>(ParNode::Mode::Left, std::move(l), std::move(r)); }
Task par_right(Task l, Task r) { return make<ParNode>(ParNode::Mode::Right, std::move(l), std::move(r)); }

Task forever(Task t) { return make<ForeverNode>(std::move(t)); }

Task sequence(std::vector<Task> ts)
{
    // collects the results into a JSON array, one task after the other
    struct Seq {
        std::vector<Task> ts;
        Task at(std::size_t i, Json acc) const
        {
            if (i == ts.size()) return ret(std::move(acc));
            auto self = *this;
            return bind_stable(ts[i], [self, i, acc](const Json& v) {
                Json next = acc;
                next.push_back(v);
                return self.at(i + 1, next);
            });
        }
    };
    return Seq{std::move(ts)}.at(0, Json::array());
}

Task feed(Task t, std::function<Task(SdsRef)> f) { return make<FeedNode>(std::move(t), std::move(f)); }

Task sidestep(Task t, std::vector<TaskCont> conts) { return make<SidestepNode>(std::move(t), std::move(conts)); }

Task maybe_cancel(std::string panic, Task t)
{
    return step(std::move(t), {on_value(if_stable([](const Json& v) { return ret(Json::array({v})); })),
                               on_action(std::move(panic), always(ret(Json::array())))});
}

Task with_shared(Json init, std::function<Task(SdsRef)> body, std::optional<Schema> schema)
{
    return make<WithSharedNode>(std::move(init), std::move(body), std::move(schema));
}

Task get(SdsRef sds) { return make<SdsNode>(SdsNode::Op::Get, std::move(sds), Json(), std::function<Json(const Json&)>()); }
Task set(SdsRef sds, Json v) { return make<SdsNode>(SdsNode::Op::Set, std::move(sds), std::move(v), std::function<Json(const Json&)>()); }
Task upd(SdsRef sds, std::function<Json(const Json&)> f) { return make<SdsNode>(SdsNode::Op::Upd, std::move(sds), Json(), std::move(f)); }
Task watch(SdsRef sds) { return make<SdsNode>(SdsNode::Op::Watch, std::move(sds), Json(), std::function<Json(const Json&)>()); }

Task with_device(DeviceRef dev, std::function<Task(DeviceRef)> body)
{
    return make<WithDeviceNode>(std::optional<DeviceRef>(dev), ConnectSpec{}, std::move(body));
}

Task with_device(ConnectSpec where, std::function<Task(DeviceRef)> body)
{
    return make<WithDeviceNode>(std::optional<DeviceRef>(), std::move(where), std::move(body));
}

Task lift_mtask(Program p, DeviceRef dev, std::map<std::string, SdsRef> bindings)
{
    return make<ProxyNode>(std::make_shared<const Program>(std::move(p)), dev, std::move(bindings));
}

Task view_device(DeviceRef dev) { return view_shared("Device", SdsRef{"device/" + std::to_string(dev.id)}); }

std::vector<DynTaskValue> Engine::proxy_trace(const std::string& path) const
{
    const Node* n = find(path);
    const auto* p = dynamic_cast<const ProxyNode*>(n);
    if (!p) throw UnknownPath("no lifted task at " + path);
    return p->trace();
}

} // namespace mtask::server
