import pytest

from pfmc.anb_frontend import (
    CORPUS,
    AnBError,
    Authentication,
    ExecutabilityError,
    Receive,
    SecureChannelGoal,
    Send,
    corpus_text,
    instantiate_sessions,
    load_corpus,
    parse_anb,
    render_anb,
    roles_to_strands,
    session_assignments,
)
from pfmc.term_algebra import Atom, Var

ONE = """Protocol: One
Types: Agent A,B;
       Number N
Knowledge: A: A,B;
           B: A,B
Actions:
A -> B: N
Goals:
N secret between A,B
"""


def sends(strand):
    return [s for s in strand.steps if isinstance(s, Send)]


def receives(strand):
    return [s for s in strand.steps if isinstance(s, Receive)]


def test_kerberos_shape():
    spec = load_corpus("kerberos")
    assert spec.roles == ["C", "a", "g", "s"]
    assert len(spec.actions) == 6
    assert spec.goals == [SecureChannelGoal("s", "C", Atom("Payload", "number"))]


def test_sso_shape():
    spec = load_corpus("sso_flawed")
    assert len(spec.roles) == 3 and len(spec.actions) == 6 and len(spec.goals) == 3
    assert isinstance(spec.goals[0], Authentication)
    assert spec.goals[0].authenticator == "SP" and spec.goals[0].peer == "C"
    assert ("SP", "C") in spec.inequalities


def test_empty_actions_rejected():
    text = ONE.replace("A -> B: N\n", "")
    with pytest.raises(AnBError):
        parse_anb(text)


def test_syntax_error_carries_position():
    with pytest.raises(AnBError) as exc:
        parse_anb(ONE.replace("A -> B: N", "A -> : N"))
    assert exc.value.line is not None


@pytest.mark.parametrize("name", CORPUS)
def test_round_trip(name):
    spec = load_corpus(name)
    assert parse_anb(render_anb(spec)) == spec


def test_comments_are_ignored():
    text = "# leading comment\n" + ONE.replace("A -> B: N", "A -> B: N  # trailing")
    assert parse_anb(text) == parse_anb(ONE)


def test_single_action_strands():
    strands = roles_to_strands(parse_anb(ONE))
    assert [s.term for s in sends(strands["A"])] == [Atom("N", "number")]
    (recv,) = receives(strands["B"])
    assert isinstance(recv.term, Var) and recv.term.kind == "number"
    assert sends(strands["B"]) == []


def test_kerberos_client_alternates():
    c = roles_to_strands(load_corpus("kerberos"))["C"]
    kinds = [type(s).__name__ for s in c.steps if isinstance(s, (Send, Receive))]
    assert kinds == ["Send", "Receive"] * 3


@pytest.mark.parametrize("name", CORPUS)
def test_each_action_is_one_send_and_one_receive(name):
    spec = load_corpus(name)
    strands = roles_to_strands(spec).values()
    assert sum(len(sends(s)) for s in strands) == len(spec.actions)
    assert sum(len(receives(s)) for s in strands) == len(spec.actions)


def test_unknown_key_is_not_executable():
    ok = ONE.replace("Number N", "Number N;\n       Function sk") \
            .replace("A: A,B", "A: A,B,sk(A,B)").replace("B: A,B", "B: A,B,sk(A,B)") \
            .replace("A -> B: N", "A -> B: {|N|}sk(A,B)")
    roles_to_strands(parse_anb(ok))
    bad = ok.replace("A: A,B,sk(A,B)", "A: A,B")
    with pytest.raises(ExecutabilityError):
        roles_to_strands(parse_anb(bad))


def test_unknown_number_is_fresh():
    strands = roles_to_strands(parse_anb(ONE))
    assert "N" in strands["A"].fresh


def test_zero_sessions_rejected():
    with pytest.raises(ValueError):
        instantiate_sessions(load_corpus("kerberos"), 0)


def test_kerberos_one_session():
    root = instantiate_sessions(load_corpus("kerberos"), 1)
    assert root.is_choice
    honest = [alt for alt in root.alternatives if all(c.strand.agent.name != "i"
                                                      for c in alt.cursors)]
    (full,) = [alt for alt in honest if len(alt.cursors) == 4]
    assert sum(len(sends(c.strand)) for c in full.cursors) == 6
    # the other assignment has the intruder as the client
    assert any(len(alt.cursors) == 3 for alt in root.alternatives)


def test_sso_two_sessions_contains_attack_assignment():
    spec = load_corpus("sso_flawed")
    maps = session_assignments(spec, 2)
    # one session with a dishonest service provider next to an honest client
    # talking to an honest one
    wanted = [{"C": "h1", "SP": "i"}, {"C": "h1", "SP": "h2"}]
    assert any(sorted(m, key=str) == sorted(wanted, key=str) for m in maps)


def test_assignments_respect_inequalities_and_symmetry():
    spec = load_corpus("sso_flawed")
    for sessions in session_assignments(spec, 2):
        for m in sessions:
            assert m["C"] != m["SP"]
    one = session_assignments(spec, 1)
    # h1/h2 renaming is factored out: (h1,h2) and (h2,h1) are one class
    assert len(one) == 3


def test_fresh_values_are_named_per_session():
    root = instantiate_sessions(load_corpus("kerberos"), 2)
    names = set()
    for alt in root.alternatives:
        for c in alt.cursors:
            for st in c.strand.steps:
                if isinstance(st, Send):
                    names.update(a.name for a in _atoms(st.term) if "#" in a.name)
    assert names
    for n in names:
        base, session, counter = n.split("#")
        assert session in ("1", "2") and counter.isdigit()


def _atoms(t):
    from pfmc.term_algebra import subterms

    return [u for u in subterms(t) if isinstance(u, Atom)]


def test_corpus_text_is_shipped():
    assert "Basic_Kerberos" in corpus_text("kerberos")
