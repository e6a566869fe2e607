import sys
import os
from dotenv import load_dotenv

# Ensure backend dir is in path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

load_dotenv()

from health import get_system_status


def print_status():
    print("\n🔍 Aberro Self-Check\n=============================")
    status = get_system_status()

    failed = []
    for subsystem, info in status.items():
        symbol = "✅" if info['status'] == 'pass' else "❌"
        print(f"{symbol} {subsystem}: {info['message']}")
        if info['status'] != 'pass':
            failed.append(subsystem)

    print("=============================")

    if not failed:
        print("🚀 All numerical self-checks passed.")
        sys.exit(0)
    print(f"⚠️ Failed: {', '.join(failed)}")
    sys.exit(1)


if __name__ == "__main__":
    print_status()
