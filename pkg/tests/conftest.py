import pytest

from selfhop.retrieval import Document, index_corpus

# A corpus small enough to hand-check rankings against, large enough that
# every sub-question in the scripted traces gets at least one hit.
CORPUS_DOCS = [
    Document(
        id="inter-nos",
        title="Inter Nos",
        body=(
            "Congratulations to the four Directors of Inter Nos. Inter Nos is led by "
            "President Juan Carlos Martinez. Cynthia Vaughn has been named Associate "
            "Editor of Inter Nos and will edit the Independent Voices section."
        ),
    ),
    Document(
        id="la-bandera",
        title="La Bandera",
        body=(
            "La Bandera is a 1935 French film directed by Julien Duvivier. "
            "Duvivier was born in Lille, France, and directed many classics."
        ),
    ),
    Document(
        id="craigslist",
        title="Craigslist",
        body=(
            "Craigslist was founded by Craig Newmark in 1995. Craig Newmark was "
            "born on December 6, 1952 in Morristown, New Jersey."
        ),
    ),
    Document(
        id="turing",
        title="Alan Turing",
        body=(
            "Alan Turing was a mathematician and computer scientist. Turing was "
            "41 years old when he died in 1954."
        ),
    ),
]


@pytest.fixture
def corpus_index():
    return index_corpus(CORPUS_DOCS)


def followup_events(subq, suba, accept=True):
    """The three scripted events behind one exploration node."""
    verdict = "True" if accept else "False"
    return [
        ("Are follow up questions needed here:", f"Follow up: {subq}"),
        ("Question-Answering-in-Reference-Task", suba),
        ("Critique-Task", f"**Final Judgment**: flag = {verdict}."),
    ]


def final_events(answer, final_flag=True):
    """Terminal decomposition step plus the closing critique."""
    verdict = "True" if final_flag else "False"
    return [
        ("Are follow up questions needed here:", f"So the final answer is: {answer}"),
        ("Critique-Task", f"flag = {verdict}."),
    ]
