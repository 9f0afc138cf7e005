"""Index a handful of documents and poke at the ranking behavior.

Shows the pieces the exploration loop relies on: scores fall out of term
rarity and document length, ties break by document id, zero-score documents
never appear, and snippets center on the first query hit.

    python3 demos/bm25_search.py
"""

from selfhop import Document, index_corpus

CORPUS = [
    Document(id="ada", title="Ada Lovelace",
             body="Ada Lovelace wrote the first program for the analytical engine. "
                  "Lovelace worked with Charles Babbage on the engine."),
    Document(id="babbage", title="Charles Babbage",
             body="Charles Babbage designed the analytical engine and the "
                  "difference engine. Babbage never finished the engine."),
    Document(id="hopper", title="Grace Hopper",
             body="Grace Hopper wrote the first compiler and popularized "
                  "machine independent programming languages."),
    Document(id="turing", title="Alan Turing",
             body="Alan Turing formalized computation itself. " + "Padding words here. " * 40),
]


def show(index, query, k=5):
    print(f"query: {query!r}")
    hits = index.search(query, k=k)
    if not hits:
        print("  (no scoring documents)")
    for rank, hit in enumerate(hits, start=1):
        print(f"  {rank}. {hit.doc_id:8s} score {hit.score:.6f}")
        print(f"     snippet: {hit.snippet[:90]}...")
    print()


def main():
    index = index_corpus(CORPUS)

    # "engine" is common in two docs, "compiler" is rare: rarity wins
    show(index, "analytical engine")
    show(index, "compiler")

    # "padding" occurs 40 times but saturation keeps the score bounded;
    # without it this document would drown out everything else
    show(index, "computation padding")

    # a query with no corpus terms returns nothing at all
    show(index, "zeppelin")


if __name__ == "__main__":
    main()
