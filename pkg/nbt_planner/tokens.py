# literal words that are values, not keys
reserved_values = {
    "TRUE",
    "FALSE",
    "NONE",
}
reserved_values = {value: value for value in reserved_values}

reserved_python_values = {
    "TRUE": True,
    "FALSE": False,
    "NONE": None,
}

symbol_tokens = {
    "{": "LBRACE",
    "}": "RBRACE",
    "[": "LBRACKET",
    "]": "RBRACKET",
    "=": "EQ",
    ",": "COMMA",
}

tokens = tuple(
    set(
        [
            "ID",
            "NUMBER",
            "DQ_STRING",
        ]
        + list(symbol_tokens.values())
        + list(reserved_values.values())
    )
)
