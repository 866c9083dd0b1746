#include "mtask/server/node.hpp"

#include <spdlog/spdlog.h>

namespace mtask::server {

std::unique_ptr<Node> Task::instantiate() const { return (*make_)(); }

// ---- Node

void Node::attach(Engine& eng, Node* parent, std::string path)
{
    parent_ = parent;
    path_ = std::move(path);
    id_ = eng.register_node(this);
}

Value Node::rewrite(Engine& eng)
{
    if (error_) throw TaskFailure(*error_);
    if (started_ && !dirty_) return value_;
    dirty_ = false;
    ++rewrites_;
    try {
        if (!started_) {
            started_ = true;
            start(eng);
        }
        value_ = eval(eng);
    } catch (const TaskFailure& f) {
        error_ = f.what();
        value_ = Value::no_value();
        throw;
    } catch (const std::exception& e) {
        error_ = e.what();
        value_ = Value::no_value();
        throw TaskFailure(*error_);
    }
    return value_;
}

void Node::stop(Engine& eng)
{
    if (stopped_) return;
    stopped_ = true;
    each_child([&](Node& c) { c.stop(eng); });
    on_stop(eng);
    eng.unregister_node(this);
}

void Node::notify(Engine& eng, const std::string&) { eng.mark(this); }

void Node::on_edit(Engine&, const Json&) { throw UnknownPath(path_ + " is not an editor"); }

void Node::on_action(Engine&, const std::string& action) { throw UnknownPath(path_ + " has no action '" + action + "'"); }

std::unique_ptr<Node> Node::adopt(Engine& eng, const Task& t, const std::string& role)
{
    auto n = t.instantiate();
    n->attach(eng, this, path_ + "/" + role);
    return n;
}

void Node::drop(Engine& eng, std::unique_ptr<Node>& n)
{
    if (!n) return;
    n->stop(eng);
    n.reset();
}

// ---- Engine

Engine::Engine() = default;

Engine::~Engine()
{
    for (auto& [id, top] : tops_)
        if (top.root) top.root->stop(*this);
    for (auto& [id, s] : sessions_)
        if (s->link) s->link->close();
}

NodeId Engine::register_node(Node* n)
{
    NodeId id = next_node_++;
    nodes_[id] = n;
    paths_[n->path()] = n;
    removed_paths_.erase(n->path());
    return id;
}

void Engine::unregister_node(Node* n)
{
    nodes_.erase(n->id());
    auto it = paths_.find(n->path());
    if (it != paths_.end() && it->second == n) {
        paths_.erase(it);
        removed_paths_.insert(n->path());
    }
    for (auto& [key, s] : sds_) s.subscribers.erase(n->id());
    for (auto it2 = waiting_.begin(); it2 != waiting_.end();) {
        if (it2->second == n->id())
            it2 = waiting_.erase(it2);
        else
            ++it2;
    }
}

Node* Engine::node(NodeId id) const
{
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : it->second;
}

void Engine::mark(Node* n)
{
    for (; n; n = n->parent_) n->dirty_ = true;
}

Engine::Sds& Engine::sds_ref(const std::string& key)
{
    auto it = sds_.find(key);
    if (it == sds_.end()) throw UnknownKey("unknown SDS '" + key + "'");
    return it->second;
}

const Engine::Sds& Engine::sds_ref(const std::string& key) const
{
    auto it = sds_.find(key);
    if (it == sds_.end()) throw UnknownKey("unknown SDS '" + key + "'");
    return it->second;
}

SdsRef Engine::shared_store(const std::string& key, Json init, std::optional<Schema> schema)
{
    if (!sds_.count(key)) {
        if (schema) init = schema->check(init);
        Sds s;
        s.value = std::move(init);
        s.schema = std::move(schema);
        sds_.emplace(key, std::move(s));
    }
    return {key};
}

bool Engine::has_sds(const std::string& key) const { return sds_.count(key) > 0; }

Json Engine::sds_get(const std::string& key) const { return sds_ref(key).value; }

Json Engine::sds_set(const std::string& key, Json v)
{
    write(key, v);
    return sds_get(key);
}

Json Engine::sds_upd(const std::string& key, const std::function<Json(const Json&)>& f) { return sds_set(key, f(sds_get(key))); }

std::uint64_t Engine::sds_writes(const std::string& key) const { return sds_ref(key).writes; }

std::size_t Engine::sds_subscribers(const std::string& key) const { return sds_ref(key).subscribers.size(); }

Json Engine::sds_all() const
{
    Json out = Json::object();
    for (const auto& [key, s] : sds_) out[key] = s.value;
    return out;
}

void Engine::subscribe(const std::string& key, NodeId id) { sds_ref(key).subscribers.insert(id); }

void Engine::unsubscribe(const std::string& key, NodeId id)
{
    auto it = sds_.find(key);
    if (it != sds_.end()) it->second.subscribers.erase(id);
}

void Engine::write_sds(const std::string& key, Json v, NodeId origin)
{
    Sds& s = sds_ref(key);
    if (s.schema) v = s.schema->check(v);
    s.value = std::move(v);
    ++s.writes;
    s.changed = true;
    // subscribers may (un)subscribe while being notified
    auto subs = s.subscribers;
    for (NodeId id : subs) {
        if (id == origin) continue;
        if (Node* n = node(id)) {
            ++n->notifications_;
            n->notify(*this, key);
        }
    }
}

std::string Engine::fresh_sds(Json init, std::optional<Schema> schema, bool read_only)
{
    std::string key;
    do key = "shared/" + std::to_string(anon_++);
    while (sds_.count(key));
    shared_store(key, std::move(init), std::move(schema));
    sds_[key].read_only = read_only;
    sds_[key].anonymous = true;
    return key;
}

void Engine::drop_sds(const std::string& key) { sds_.erase(key); }

bool Engine::sds_read_only(const std::string& key) const { return sds_ref(key).read_only; }

int Engine::spawn(Task t, std::string name)
{
    int id = next_top_++;
    Top& top = tops_[id];
    top.id = id;
    top.name = name.empty() ? "task" + std::to_string(id) : std::move(name);
    top.root = t.instantiate();
    top.root->attach(*this, nullptr, "/" + std::to_string(id));
    ++ticks_;
    commit();
    return id;
}

void Engine::remove(int top)
{
    auto it = tops_.find(top);
    if (it == tops_.end()) throw UnknownPath("no task " + std::to_string(top));
    it->second.root->stop(*this);
    tops_.erase(it);
    commit();
}

std::vector<int> Engine::tops() const
{
    std::vector<int> out;
    for (const auto& [id, t] : tops_) out.push_back(id);
    return out;
}

Value Engine::value(int top) const
{
    auto it = tops_.find(top);
    if (it == tops_.end()) throw UnknownPath("no task " + std::to_string(top));
    return it->second.root->value();
}

std::optional<std::string> Engine::error(int top) const
{
    auto it = tops_.find(top);
    if (it == tops_.end()) throw UnknownPath("no task " + std::to_string(top));
    return it->second.root->error();
}

void Engine::settle()
{
    // writes made while rewriting mark further subscribers; keep going
    // until the forest is clean (bounded, so a feedback loop cannot hang)
    for (int pass = 0; pass < 64; ++pass) {
        bool any = false;
        for (auto& [id, top] : tops_) {
            Node& root = *top.root;
            if (root.error_ || (root.started_ && !root.dirty_)) continue;
            any = true;
            try {
                root.rewrite(*this);
            } catch (const TaskFailure& f) {
                spdlog::warn("server: task {} failed: {}", top.name, f.what());
            }
        }
        if (!any) return;
    }
    spdlog::warn("server: rewrite did not settle after 64 passes");
}

Node* Engine::find_mut(const std::string& path) const
{
    auto it = paths_.find(path);
    return it == paths_.end() ? nullptr : it->second;
}

const Node* Engine::find(const std::string& path) const { return find_mut(path); }

Value Engine::value_at(const std::string& path) const
{
    const Node* n = find(path);
    if (!n) throw UnknownPath("no task at " + path);
    return n->value();
}

std::uint64_t Engine::rewrites_at(const std::string& path) const
{
    const Node* n = find(path);
    if (!n) throw UnknownPath("no task at " + path);
    return n->rewrites();
}

std::uint64_t Engine::notifications_at(const std::string& path) const
{
    const Node* n = find(path);
    if (!n) throw UnknownPath("no task at " + path);
    return n->notifications();
}

namespace {

Json node_json(const Node& n)
{
    Json out = {{"path", n.path()}, {"kind", n.kind()}, {"value", to_json(n.value())}, {"rewrites", n.rewrites()}};
    if (n.error()) out["error"] = *n.error();
    n.describe(out);
    Json kids = Json::array();
    n.each_child([&](Node& c) { kids.push_back(node_json(c)); });
    out["children"] = kids;
    return out;
}

} // namespace

Json Engine::forest() const
{
    Json out = Json::array();
    for (const auto& [id, top] : tops_) {
        Json t = node_json(*top.root);
        t["id"] = id;
        t["name"] = top.name;
        out.push_back(t);
    }
    return out;
}

// ---- devices

int Engine::add_device(std::unique_ptr<DeviceLink> link, wire::DeviceSpec spec, std::string name)
{
    int id = next_device_++;
    auto s = std::make_unique<Session>();
    s->id = id;
    s->name = name.empty() ? "device" + std::to_string(id) : std::move(name);
    s->spec = spec;
    s->link = std::move(link);
    sessions_[id] = std::move(s);
    sessions_[id]->link->attached(id);
    devices_changed_ = true;
    Json info = devices_json().back();
    std::string key = "device/" + std::to_string(id);
    shared_store(key, info);
    sds_[key].read_only = true;
    return id;
}

Engine::Session* Engine::session(int device)
{
    auto it = sessions_.find(device);
    return it == sessions_.end() ? nullptr : it->second.get();
}

bool Engine::device_connected(int device) const
{
    auto it = sessions_.find(device);
    return it != sessions_.end() && it->second->connected;
}

std::vector<DeviceInfo> Engine::devices() const
{
    std::vector<DeviceInfo> out;
    for (const auto& [id, s] : sessions_) out.push_back({id, s->name, s->spec, s->connected, s->tasks.size()});
    return out;
}

Json Engine::devices_json() const
{
    Json out = Json::array();
    for (const auto& d : devices()) {
        out.push_back({{"id", d.id},
                       {"name", d.name},
                       {"connected", d.connected},
                       {"tasks", d.live_tasks},
                       {"spec",
                        {{"version", d.spec.version},
                         {"arena", d.spec.arena_capacity},
                         {"analogPins", d.spec.analog_pins},
                         {"digitalPins", d.spec.digital_pins},
                         {"dht", d.spec.dht},
                         {"matrix", d.spec.matrix}}}});
    }
    return out;
}

void Engine::send(int device, const wire::Message& m)
{
    Session* s = session(device);
    if (!s || !s->connected || !s->link) return;
    ++s->sent[wire::tag_of(m)];
    s->link->send(m);
}

std::uint16_t Engine::ship(int device, NodeId proxy, const std::vector<std::uint8_t>& image)
{
    Session* s = session(device);
    if (!s) throw UnknownDevice("no device " + std::to_string(device));
    std::uint16_t id = s->next_task++;
    s->tasks[id] = proxy;
    devices_changed_ = true;
    send(device, wire::AddTask{id, image});
    return id;
}

void Engine::forget_task(int device, std::uint16_t task)
{
    Session* s = session(device);
    if (!s) return;
    if (s->tasks.erase(task)) {
        devices_changed_ = true;
        if (s->connected) send(device, wire::DelTask{task});
    }
}

void Engine::end_session(int device)
{
    Session* s = session(device);
    if (!s) throw UnknownDevice("no device " + std::to_string(device));
    if (!s->connected) return;
    auto tasks = s->tasks;
    for (const auto& [tid, nid] : tasks) send(device, wire::DelTask{tid});
    s->tasks.clear();
    s->connected = false;
    if (s->link) s->link->close();
    for (const auto& [tid, nid] : tasks)
        if (Node* n = node(nid)) n->on_device_lost(*this, "session ended");
    devices_changed_ = true;
    commit();
}

std::uint64_t Engine::request_connection(const ConnectSpec& where, NodeId waiter)
{
    if (!connector_) throw TaskFailure("ConnectFailed: no connector configured");
    std::uint64_t req = next_request_++;
    waiting_[req] = waiter;
    connector_(req, where);
    return req;
}

// ---- events

void Engine::submit(Event e) { queue_.push_back(std::move(e)); }

bool Engine::tick()
{
    if (queue_.empty()) return false;
    Event e = std::move(queue_.front());
    queue_.pop_front();
    ++ticks_;
    handle(e);
    commit();
    return true;
}

std::size_t Engine::run(std::size_t max_ticks)
{
    std::size_t n = 0;
    while (n < max_ticks && tick()) ++n;
    return n;
}

void Engine::handle(const Event& e)
{
    try {
        std::visit(
            [&](const auto& ev) {
                using T = std::decay_t<decltype(ev)>;
                if constexpr (std::is_same_v<T, SdsWrite>) {
                    if (sds_read_only(ev.key)) throw ActionDisabled("SDS '" + ev.key + "' is read-only");
                    write_sds(ev.key, ev.value);
                } else if constexpr (std::is_same_v<T, EditorInput>) {
                    Node* n = find_mut(ev.path);
                    if (!n) throw UnknownPath("no task at " + ev.path);
                    n->on_edit(*this, ev.value);
                } else if constexpr (std::is_same_v<T, ActionInput>) {
                    Node* n = find_mut(ev.path);
                    if (!n) throw UnknownPath("no task at " + ev.path);
                    n->on_action(*this, ev.action);
                } else if constexpr (std::is_same_v<T, DeviceMessage>) {
                    handle_device(ev.device, ev.message);
                } else if constexpr (std::is_same_v<T, DeviceClosed>) {
                    Session* s = session(ev.device);
                    if (!s || !s->connected) return;
                    s->connected = false;
                    auto tasks = std::move(s->tasks);
                    s->tasks.clear();
                    for (const auto& [tid, nid] : tasks)
                        if (Node* n = node(nid)) n->on_device_lost(*this, ev.reason);
                    devices_changed_ = true;
                    spdlog::info("server: device {} closed ({})", ev.device, ev.reason);
                } else if constexpr (std::is_same_v<T, DeviceState>) {
                    if (device_state_[ev.device] != ev.state) {
                        device_state_[ev.device] = ev.state;
                        device_state_changed_.insert(ev.device);
                    }
                } else {
                    ConnectResult& r = *ev;
                    auto it = waiting_.find(r.request);
                    Node* n = it == waiting_.end() ? nullptr : node(it->second);
                    if (it != waiting_.end()) waiting_.erase(it);
                    if (!n) {
                        if (r.link) r.link->close();
                        return;
                    }
                    n->on_connected(*this, r);
                    mark(n);
                }
            },
            e);
    } catch (const std::exception& ex) {
        spdlog::warn("server: event ignored: {}", ex.what());
    }
}

void Engine::sync_device_sds()
{
    for (const auto& d : devices_json()) {
        std::string key = "device/" + std::to_string(d["id"].get<int>());
        auto it = sds_.find(key);
        if (it != sds_.end() && it->second.value != d) write_sds(key, d);
    }
}

void Engine::commit()
{
    settle();
    sync_device_sds();
    settle();
}

void Engine::handle_device(int device, const wire::Message& m)
{
    Session* s = session(device);
    if (!s || !s->connected) return;
    auto route = [&](std::uint16_t task) {
        auto it = s->tasks.find(task);
        if (it == s->tasks.end()) return;
        if (Node* n = node(it->second)) n->on_device(*this, m);
    };
    std::visit(
        [&](const auto& msg) {
            using T = std::decay_t<decltype(msg)>;
            if constexpr (std::is_same_v<T, wire::TaskValueMsg> || std::is_same_v<T, wire::AckTask> ||
                          std::is_same_v<T, wire::RejectTask> || std::is_same_v<T, wire::TaskFail> ||
                          std::is_same_v<T, wire::SdsUp>) {
                route(msg.task);
            } else if constexpr (std::is_same_v<T, wire::Ping>) {
                send(device, wire::Pong{});
            }
        },
        m);
}

void Engine::edit(const std::string& path, const Json& value)
{
    Node* n = find_mut(path);
    if (!n) throw UnknownPath("no task at " + path);
    ++ticks_;
    n->on_edit(*this, value);
    commit();
}

void Engine::action(const std::string& path, const std::string& act)
{
    Node* n = find_mut(path);
    if (!n) throw UnknownPath("no task at " + path);
    ++ticks_;
    n->on_action(*this, act);
    commit();
}

void Engine::write(const std::string& key, const Json& value)
{
    if (sds_read_only(key)) throw ActionDisabled("SDS '" + key + "' is read-only");
    if (const auto& s = sds_ref(key).schema) s->check(value);
    ++ticks_;
    write_sds(key, value);
    commit();
}

// ---- deltas

void Engine::collect_delta(const Node& n, Json& values) const
{
    if (!(n.published == n.value()) || removed_paths_.count(n.path())) {
        Json v = to_json(n.value());
        if (n.error()) v["error"] = *n.error();
        values[n.path()] = v;
        const_cast<Node&>(n).published = n.value();
    }
    n.each_child([&](Node& c) { collect_delta(c, values); });
}

Json Engine::take_delta()
{
    Json out = {{"tick", ticks_}};
    Json values = Json::object();
    for (const auto& [id, top] : tops_) collect_delta(*top.root, values);
    out["taskValues"] = values;
    Json removed = Json::array();
    for (const auto& p : removed_paths_)
        if (!paths_.count(p)) removed.push_back(p);
    removed_paths_.clear();
    out["removed"] = removed;
    Json sds = Json::object();
    for (auto& [key, s] : sds_) {
        if (!s.changed) continue;
        sds[key] = s.value;
        s.changed = false;
    }
    out["sdsValues"] = sds;
    if (devices_changed_) {
        out["devices"] = devices_json();
        devices_changed_ = false;
    }
    Json frames = Json::object(), pins = Json::object();
    for (int d : device_state_changed_) {
        const Json& st = device_state_[d];
        if (st.contains("matrix")) frames[std::to_string(d)] = st["matrix"];
        Json p = Json::object();
        for (const char* k : {"analog", "digital", "temperature", "humidity"})
            if (st.contains(k)) p[k] = st[k];
        pins[std::to_string(d)] = p;
    }
    device_state_changed_.clear();
    out["matrixFrame"] = frames;
    out["pinStates"] = pins;
    return out;
}

Json Engine::full_state() const
{
    Json values = Json::object();
    std::function<void(const Node&)> walk = [&](const Node& n) {
        Json v = to_json(n.value());
        if (n.error()) v["error"] = *n.error();
        values[n.path()] = v;
        n.each_child([&](Node& c) { walk(c); });
    };
    for (const auto& [id, top] : tops_) walk(*top.root);
    Json frames = Json::object(), pins = Json::object();
    for (const auto& [d, st] : device_state_) {
        if (st.contains("matrix")) frames[std::to_string(d)] = st["matrix"];
        Json p = Json::object();
        for (const char* k : {"analog", "digital", "temperature", "humidity"})
            if (st.contains(k)) p[k] = st[k];
        pins[std::to_string(d)] = p;
    }
    return {{"tick", ticks_},     {"taskValues", values}, {"removed", Json::array()}, {"sdsValues", sds_all()},
            {"devices", devices_json()}, {"matrixFrame", frames},  {"pinStates", pins},          {"tasks", forest()}};
}

} // namespace mtask::server
