"""Small worlds and a packet-recording host for actor-level tests."""

from dnspoisonlab.netmodel import Host
from dnspoisonlab.scenario import AttackScenario, build_world, compile_scenario


class Probe(Host):
    """Records everything delivered to it; sends whatever the test asks."""

    def __init__(self, ip, actor_id="probe"):
        super().__init__(actor_id, ip)
        self.got = []

    def receive(self, unit):
        self.got.append((self.now, unit))

    def send_spoofed(self, unit):
        return self.fabric.deliver(self.actor_id, unit)


def scenario(method="frag", **sections):
    data = {"name": "t", "method": method}
    data.update(sections)
    return AttackScenario.from_dict(data)


def world(method="frag", trial=0, **sections):
    w = build_world(compile_scenario(scenario(method, **sections)), trial)
    probe = Probe(w.ips["attacker"])
    w.fabric.add_host(probe, w.rng.fork(9))
    return w, probe
