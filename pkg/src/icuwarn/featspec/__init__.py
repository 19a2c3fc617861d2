"""Feature-spec DSL: parser, SQL generator and in-process evaluator."""
from importlib import resources

from .ast import SpecAst, SpecError, parse_spec, print_spec
from .query import catalog_of, execute_query, generate_sql
from .relational import QueryError, RelTable


def bundled_spec(name: str) -> str:
    return resources.files(__name__).joinpath("specs", f"{name}.spec").read_text()


__all__ = ["SpecAst", "SpecError", "parse_spec", "print_spec", "catalog_of", "execute_query",
           "generate_sql", "QueryError", "RelTable", "bundled_spec"]
